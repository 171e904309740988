#include <doctest.h>

#include "ctc/sim.hpp"
#include "oracles.hpp"

using namespace ctc;
using namespace ctc::sim;

namespace {

ExperimentConfig small_config(QuantizerMode q) {
  ExperimentConfig cfg;
  cfg.quantizer = q;
  cfg.payload_len = 6;
  cfg.trials = 4;
  cfg.train.epochs = 40;
  cfg.threads = 1;
  return cfg;
}

CVec block_target_bins(const dsp::ComplexSignal& sig, std::size_t b, const std::vector<int>& sc) {
  const CVec body(sig.samples.begin() + long(b * 80 + 16), sig.samples.begin() + long(b * 80 + 80));
  const CVec X = oracle::naive_dft(body);
  CVec z;
  for (int s : sc) z.push_back(X[dsp::FreqGrid::dft_index(s)]);
  return z;
}

}  // namespace

TEST_CASE("target construction") {
  CHECK(make_target({}, -3.125e6).size() == 3840);
  const std::vector<std::uint8_t> p(32, 0x5A);
  const auto t = make_target(p, -3.125e6);
  CHECK(t.size() == 24320);
  CHECK(t.size() % 80 == 0);
  CHECK(t.sample_rate_hz == 20e6);

  // Almost all the power sits within the ZigBee main lobe around delta_f.
  const std::size_t n = 512;
  double total = 0.0, inband = 0.0;
  for (std::size_t start = 0; start + n <= t.size(); start += n) {
    const CVec seg(t.samples.begin() + long(start), t.samples.begin() + long(start + n));
    const CVec X = oracle::naive_dft(seg);
    for (std::size_t k = 0; k < n; ++k) {
      const double f = (k < n / 2 ? double(k) : double(k) - double(n)) * 20e6 / double(n);
      total += std::norm(X[k]);
      if (std::abs(f + 3.125e6) <= 1.5e6) inband += std::norm(X[k]);
    }
  }
  CHECK(inband / total > 0.99);
  CHECK_THROWS_AS(make_target(p, 9e6), ConfigError);
}

TEST_CASE("subcarrier selection") {
  const auto sc = nearest_subcarriers(-3.125e6);
  CHECK(sc == std::vector<int>{-14, -13, -12, -11, -10, -9, -8});
  for (int s : nearest_subcarriers(2e6, 12)) CHECK(wifi::is_data(s));
  ExperimentConfig cfg;
  cfg.subcarriers = {-20, -19};
  CHECK(resolved_subcarriers(cfg) == cfg.subcarriers);
}

TEST_CASE("baseline quantizers") {
  const std::vector<std::uint8_t> p = {1, 2, 3};
  const auto t = make_target(p, -3.125e6);
  const auto sc = nearest_subcarriers(-3.125e6);
  const auto c = wifi::Constellation::make(wifi::Modulation::qam64);

  SUBCASE("webee is the nearest point after max-abs normalisation") {
    const auto g = baseline_quantize(t, QuantizerMode::webee, sc, c);
    REQUIRE(g.n_symbols == t.size() / 80);
    for (std::size_t b = 0; b < g.n_symbols; ++b) {
      const CVec z = block_target_bins(t, b, sc);
      double peak = 0.0;
      for (const auto& v : z) peak = std::max(peak, std::abs(v));
      CVec zn = z;
      for (auto& v : zn) v /= (peak > 0 ? peak : 1.0);
      const auto h = nn::hard_quantize(zn, c, nn::QuantizerParams{CVec(sc.size(), 1.0), 1.0});
      for (std::size_t k = 0; k < sc.size(); ++k) CHECK(g.at(b, k) == h[k]);
    }
  }
  SUBCASE("nn-webee with unit scales equals webee") {
    const nn::QuantizerParams unit{CVec(sc.size(), 1.0), 1.0};
    CHECK(baseline_quantize(t, QuantizerMode::nn_webee, sc, c, unit).index ==
          baseline_quantize(t, QuantizerMode::webee, sc, c).index);
    CHECK_THROWS_AS(baseline_quantize(t, QuantizerMode::nn_webee, sc, c), ConfigError);
    CHECK_THROWS_AS(baseline_quantize(t, QuantizerMode::nnctc, sc, c), ConfigError);
  }
  SUBCASE("wide ignores magnitude") {
    dsp::ComplexSignal louder = t;
    for (auto& v : louder.samples) v *= 17.0;
    CHECK(baseline_quantize(louder, QuantizerMode::wide, sc, c).index ==
          baseline_quantize(t, QuantizerMode::wide, sc, c).index);
  }
}

TEST_CASE("configuration checks") {
  ExperimentConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.delta_f_hz = 9.0e6;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.trials = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.subcarriers = {-21};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.quantizer = QuantizerMode::nn_webee;
  CHECK_THROWS_AS(prepare_link(cfg), ConfigError);
  CHECK(parse_quantizer_mode(to_string(QuantizerMode::nn_webee)) == QuantizerMode::nn_webee);
  CHECK_THROWS_AS(parse_quantizer_mode("best"), ConfigError);
}

TEST_CASE("noiseless pipeline decodes") {
  for (auto q : {QuantizerMode::webee, QuantizerMode::nnctc}) {
    INFO(to_string(q));
    const auto m = run_pipeline(small_config(q));
    REQUIRE(m.size() == 1);
    CHECK(m[0].trials == 4);
    CHECK(m[0].ser == 0.0);
    CHECK(m[0].prr == 1.0);
    CHECK(m[0].detection_rate == 1.0);
    CHECK(m[0].goodput_bps > 0.0);
  }
}

TEST_CASE("very low snr loses the frame") {
  ExperimentConfig cfg = small_config(QuantizerMode::webee);
  cfg.snr_db = {-30.0};
  cfg.trials = 10;
  const auto m = run_pipeline(cfg);
  CHECK(m[0].prr == 0.0);
  CHECK(m[0].ser > 0.5);
}

TEST_CASE("results are deterministic for a seed") {
  ExperimentConfig cfg = small_config(QuantizerMode::nnctc);
  cfg.snr_db = {2.0, 6.0};
  const auto a = run_pipeline(cfg);
  cfg.threads = 3;
  const auto b = run_pipeline(cfg);
  REQUIRE(a.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a[i].ser == b[i].ser);
    CHECK(a[i].prr == b[i].prr);
    CHECK(a[i].chip_error_rate == b[i].chip_error_rate);
    CHECK(a[i].nmse_body == b[i].nmse_body);
  }
}

TEST_CASE("a supplied model is reused instead of retrained") {
  ExperimentConfig cfg = small_config(QuantizerMode::nnctc);
  nn::EmulationModel trained = nn::build_autoencoder({.subcarriers = resolved_subcarriers(cfg)});
  const auto first = prepare_link(cfg, nullptr, &trained);
  REQUIRE(first.training);
  const auto again = prepare_link(cfg, &trained);
  CHECK(!again.training);
  CHECK(again.grid.index == first.grid.index);
  CHECK(again.solution.psdu == first.solution.psdu);
}

TEST_CASE("sweep rows and csv") {
  ExperimentConfig cfg = small_config(QuantizerMode::webee);
  cfg.trials = 2;
  SweepGrid grid{{dsp::kNoiseless, 5.0}, {3, 5}, {QuantizerMode::webee, QuantizerMode::wide}};
  const auto rows = sweep(cfg, grid);
  CHECK(rows.size() == 8);
  CHECK(rows[0].payload_len == 3);
  CHECK(rows[2].payload_len == 5);
  CHECK(rows[4].quantizer == QuantizerMode::wide);

  const auto back = parse_sweep_csv(sweep_csv(rows));
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].quantizer == rows[i].quantizer);
    CHECK(back[i].payload_len == rows[i].payload_len);
    CHECK(back[i].metrics.snr_db == rows[i].metrics.snr_db);
    CHECK(back[i].metrics.ser == doctest::Approx(rows[i].metrics.ser));
    CHECK(back[i].metrics.violated_bit_count == rows[i].metrics.violated_bit_count);
  }
  CHECK(sweep_csv(back) == sweep_csv(rows));
  CHECK_THROWS_AS(parse_sweep_csv("bad header\n"), ConfigError);
}
