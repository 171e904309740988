#include "ctc/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

namespace ctc::sim {

namespace {

constexpr std::size_t kBlock = wifi::kSymbolLength;
constexpr std::uint64_t kPayloadStream = 0x5041594c4f4144ULL;

template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          body(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

// Target bins of block b (natural DFT of the 64-sample body).
CVec block_bins(const dsp::ComplexSignal& sig, std::size_t b, const std::vector<int>& subcarriers) {
  CVec body(dsp::kFftSize, cd(0.0, 0.0));
  for (std::size_t n = 0; n < dsp::kFftSize; ++n) {
    const std::size_t i = b * kBlock + wifi::kCpLength + n;
    if (i < sig.size()) body[n] = sig.samples[i];
  }
  const CVec bins = dsp::dft(body);
  CVec z(subcarriers.size());
  for (std::size_t k = 0; k < subcarriers.size(); ++k) z[k] = bins[dsp::FreqGrid::dft_index(subcarriers[k])];
  return z;
}

// What the ZigBee front end passes: shift to baseband and channel-filter.
CVec in_channel(const dsp::ComplexSignal& sig, double delta_f_hz, const zigbee::ReceiverConfig& rc) {
  const dsp::ComplexSignal bb = dsp::frequency_shift(sig, -delta_f_hz);
  if (rc.channel_cutoff_hz <= 0.0) return bb.samples;
  const auto taps = dsp::design_lowpass(rc.channel_cutoff_hz, bb.sample_rate_hz, rc.filter_taps);
  return dsp::filter_same(bb.samples, taps);
}

struct ChannelFit {
  double nmse_body = 0.0;
  double phase_mse = 0.0;
};

// In-channel comparison over OFDM bodies (CP regions skipped). NMSE uses the
// least-squares complex gain; phase error is scale free.
ChannelFit channel_fit(const dsp::ComplexSignal& target, const dsp::ComplexSignal& emulated,
                       double delta_f_hz, const zigbee::ReceiverConfig& rc) {
  const CVec u = in_channel(target, delta_f_hz, rc);
  const CVec v = in_channel(emulated, delta_f_hz, rc);
  const std::size_t n = std::min(u.size(), v.size());
  cd num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % kBlock < wifi::kCpLength) continue;
    num += u[i] * std::conj(v[i]);
    den += std::norm(v[i]);
  }
  const cd alpha = den > 0.0 ? num / den : cd(0.0, 0.0);
  double err = 0.0, ref = 0.0, ph = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % kBlock < wifi::kCpLength) continue;
    err += std::norm(u[i] - alpha * v[i]);
    ref += std::norm(u[i]);
    const double d = std::arg(u[i] * std::conj(v[i]));
    ph += d * d;
    ++count;
  }
  ChannelFit f;
  f.nmse_body = ref > 0.0 ? err / ref : 0.0;
  f.phase_mse = count > 0 ? ph / static_cast<double>(count) : 0.0;
  return f;
}

}  // namespace

std::string to_string(QuantizerMode m) {
  switch (m) {
    case QuantizerMode::nnctc: return "nnctc";
    case QuantizerMode::webee: return "webee";
    case QuantizerMode::wide: return "wide";
    case QuantizerMode::nn_webee: return "nn-webee";
  }
  return "?";
}

QuantizerMode parse_quantizer_mode(std::string_view s) {
  if (s == "nnctc") return QuantizerMode::nnctc;
  if (s == "webee") return QuantizerMode::webee;
  if (s == "wide") return QuantizerMode::wide;
  if (s == "nn-webee" || s == "nn_webee") return QuantizerMode::nn_webee;
  throw ConfigError("unknown quantizer mode " + std::string(s));
}

void ExperimentConfig::validate() const {
  if (std::abs(delta_f_hz) + 1.5e6 > 10e6) {
    throw ConfigError("delta_f_hz " + std::to_string(delta_f_hz) +
                      " puts the ZigBee main lobe outside the WiFi band");
  }
  if (payload.size() > zigbee::kMaxPayload || (payload.empty() && payload_len > zigbee::kMaxPayload)) {
    throw ConfigError("payload longer than 127 bytes");
  }
  if (snr_db.empty()) throw ConfigError("snr_db list is empty");
  for (double s : snr_db) {
    if (std::isnan(s) || (std::isinf(s) && s < 0)) throw ConfigError("snr_db entries must be numbers or inf");
  }
  if (trials == 0) throw ConfigError("trials must be positive");
  if ((scrambler_seed & 0x7F) == 0) throw ConfigError("scrambler_seed must be a non-zero 7-bit value");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(train.lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(train.tau_floor > 0.0) || !(train.tau_decay > 0.0) || train.tau_decay > 1.0) {
    throw ConfigError("tau schedule out of range");
  }
  for (int sc : subcarriers) {
    if (!wifi::is_data(sc)) throw ConfigError("subcarrier " + std::to_string(sc) + " is not a data subcarrier");
  }
}

std::vector<int> nearest_subcarriers(double delta_f_hz, std::size_t n) {
  const double centre = delta_f_hz / dsp::kSubcarrierSpacingHz;
  const auto& data = wifi::data_subcarriers();
  std::vector<int> cand(data.begin(), data.end());
  std::stable_sort(cand.begin(), cand.end(), [centre](int a, int b) {
    return std::abs(a - centre) < std::abs(b - centre);
  });
  if (n > cand.size()) throw ConfigError("asked for more subcarriers than exist");
  cand.resize(n);
  std::sort(cand.begin(), cand.end());
  return cand;
}

std::vector<int> resolved_subcarriers(const ExperimentConfig& cfg) {
  return cfg.subcarriers.empty() ? nearest_subcarriers(cfg.delta_f_hz) : cfg.subcarriers;
}

std::vector<std::uint8_t> resolved_payload(const ExperimentConfig& cfg) {
  if (!cfg.payload.empty()) return cfg.payload;
  dsp::Rng rng = dsp::Rng(cfg.seed).derive(kPayloadStream);
  std::vector<std::uint8_t> p(cfg.payload_len);
  for (auto& b : p) b = static_cast<std::uint8_t>(rng.next_u64() >> 56);
  return p;
}

dsp::ComplexSignal make_target(std::span<const std::uint8_t> payload, double delta_f_hz) {
  if (std::abs(delta_f_hz) + 1.5e6 > 10e6) {
    throw ConfigError("delta_f_hz " + std::to_string(delta_f_hz) +
                      " puts the ZigBee main lobe outside the WiFi band");
  }
  const auto chips = zigbee::symbols_to_chips(zigbee::build_frame(payload));
  dsp::ComplexSignal sig = zigbee::oqpsk_modulate(chips, dsp::kWifiSampleRateHz);
  sig = dsp::frequency_shift(sig, delta_f_hz);
  const std::size_t padded = nn::block_count(sig.size()) * kBlock;
  sig.samples.resize(padded, cd(0.0, 0.0));
  return sig;
}

solver::IndexGrid baseline_quantize(const dsp::ComplexSignal& target, QuantizerMode mode,
                                    const std::vector<int>& subcarriers, const wifi::Constellation& c,
                                    const std::optional<nn::QuantizerParams>& scales) {
  if (mode == QuantizerMode::nnctc) throw ConfigError("nnctc is not a baseline quantizer");
  if (mode == QuantizerMode::nn_webee) {
    if (!scales) throw ConfigError("nn-webee needs scales from a trained model file");
    if (scales->scales.size() != subcarriers.size()) {
      throw ConfigError("model scales do not match the target subcarrier set");
    }
  }
  solver::IndexGrid g;
  g.n_symbols = nn::block_count(target.size());
  g.subcarriers = subcarriers;
  const std::size_t m = subcarriers.size();
  for (std::size_t b = 0; b < g.n_symbols; ++b) {
    const CVec z = block_bins(target, b, subcarriers);
    const double gain = nn::block_gain(z);
    for (std::size_t k = 0; k < m; ++k) {
      std::uint32_t idx = 0;
      if (mode == QuantizerMode::wide) {
        double best = std::numeric_limits<double>::infinity();
        double best_mag = -1.0;
        for (std::size_t j = 0; j < c.size(); ++j) {
          const double d = std::abs(std::arg(z[k] * std::conj(c.point(j))));
          const double mag = std::abs(c.point(j));
          if (d < best - 1e-12 || (std::abs(d - best) <= 1e-12 && mag > best_mag + 1e-12)) {
            best = d;
            best_mag = mag;
            idx = static_cast<std::uint32_t>(j);
          }
        }
      } else {
        const cd s = mode == QuantizerMode::nn_webee ? scales->scales[k] : cd(1.0, 0.0);
        idx = static_cast<std::uint32_t>(c.nearest(s * gain * z[k]));
      }
      g.index.push_back(idx);
      g.energy.push_back(std::norm(z[k]));
    }
  }
  return g;
}

PreparedLink prepare_link(const ExperimentConfig& cfg, const nn::EmulationModel* model,
                          nn::EmulationModel* trained_out) {
  cfg.validate();
  PreparedLink link;
  link.payload = resolved_payload(cfg);
  link.target = make_target(link.payload, cfg.delta_f_hz);
  const auto subcarriers = resolved_subcarriers(cfg);
  const wifi::Constellation cons = cfg.mcs.constellation();

  switch (cfg.quantizer) {
    case QuantizerMode::nnctc: {
      if (model || !cfg.model_path.empty()) {
        std::optional<nn::EmulationModel> owned;
        if (!model) owned.emplace(nn::load_model(cfg.model_path));
        const nn::EmulationModel& use = model ? *model : *owned;
        if (use.config().subcarriers != subcarriers) {
          throw ConfigError("model subcarriers do not match the target subcarrier set");
        }
        link.grid = nn::infer_symbols(use, link.target);
        link.quantizer = use.quantizer_params();
        if (trained_out && owned) *trained_out = std::move(*owned);
        break;
      }
      nn::ModelConfig mc;
      mc.modulation = cfg.mcs.modulation;
      mc.subcarriers = subcarriers;
      mc.mode = cfg.emulation_mode;
      mc.tau = cfg.tau;
      mc.train_tau = cfg.train_tau;
      nn::EmulationModel m(mc);
      link.training = nn::train(m, link.target, cfg.train);
      link.grid = nn::infer_symbols(m, link.target);
      link.quantizer = m.quantizer_params();
      if (trained_out) *trained_out = std::move(m);
      break;
    }
    case QuantizerMode::webee:
    case QuantizerMode::wide:
      link.grid = baseline_quantize(link.target, cfg.quantizer, subcarriers, cons);
      break;
    case QuantizerMode::nn_webee: {
      std::optional<nn::QuantizerParams> p;
      if (model) {
        p = model->quantizer_params();
      } else if (!cfg.model_path.empty()) {
        p = nn::load_model(cfg.model_path).quantizer_params();
      } else {
        throw ConfigError("nn-webee needs model_path pointing at a trained model");
      }
      link.quantizer = p;
      link.grid = baseline_quantize(link.target, cfg.quantizer, subcarriers, cons, p);
      break;
    }
  }

  link.solution = solver::solve_payload(link.grid, cfg.mcs, cfg.scrambler_seed);
  link.tx = wifi::modulate_psdu(link.solution.psdu, cfg.mcs, cfg.scrambler_seed);

  const ChannelFit fit = channel_fit(link.target, link.tx.waveform, cfg.delta_f_hz, cfg.receiver);
  link.nmse_body = fit.nmse_body;
  link.phase_mse = fit.phase_mse;
  double err = 0.0, ref = 0.0;
  for (std::size_t b = 0; b < link.grid.n_symbols; ++b) {
    const CVec z = block_bins(link.target, b, subcarriers);
    const double gain = nn::block_gain(z);
    for (std::size_t k = 0; k < subcarriers.size(); ++k) {
      const cd want = gain * z[k];
      err += std::norm(link.tx.symbols.grid.subcarrier(b, subcarriers[k]) - want);
      ref += std::norm(want);
    }
  }
  link.evm = ref > 0.0 ? std::sqrt(err / ref) : 0.0;
  return link;
}

TrialResult run_trial(const PreparedLink& link, const ExperimentConfig& cfg, double snr_db,
                      std::size_t snr_index, std::size_t trial) {
  dsp::Rng rng = dsp::Rng(cfg.seed).derive((static_cast<std::uint64_t>(snr_index) << 32) | trial);
  dsp::ComplexSignal sig;
  sig.sample_rate_hz = link.tx.waveform.sample_rate_hz;
  sig.samples.assign(cfg.lead_in_samples, cd(0.0, 0.0));
  sig.samples.insert(sig.samples.end(), link.tx.waveform.samples.begin(), link.tx.waveform.samples.end());
  if (!std::isinf(snr_db)) {
    // Noise power is set by the WiFi frame, not diluted by the lead-in.
    const double eff = snr_db + 10.0 * std::log10(static_cast<double>(link.tx.waveform.size()) /
                                                  static_cast<double>(sig.size()));
    sig = dsp::awgn(sig, eff, rng);
  }
  const dsp::ComplexSignal rx = dsp::frequency_shift(sig, -cfg.delta_f_hz);
  const zigbee::DecodeResult d = zigbee::decode_frame(rx, &link.payload, cfg.receiver);
  TrialResult r;
  r.detected = d.detected;
  r.payload_ok = d.detected && d.payload && *d.payload == link.payload;
  r.ser = d.ser.value_or(1.0);
  r.chip_error_rate = d.chip_error_rate.value_or(1.0);
  return r;
}

Metrics evaluate(const PreparedLink& link, const ExperimentConfig& cfg, double snr_db, std::size_t snr_index) {
  std::vector<TrialResult> res(cfg.trials);
  parallel_for(cfg.trials, cfg.threads,
               [&](std::size_t t) { res[t] = run_trial(link, cfg, snr_db, snr_index, t); });
  Metrics m;
  m.snr_db = snr_db;
  m.trials = cfg.trials;
  for (const auto& r : res) {
    m.ser += r.ser;
    m.chip_error_rate += r.chip_error_rate;
    m.prr += r.payload_ok ? 1.0 : 0.0;
    m.detection_rate += r.detected ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(cfg.trials);
  m.ser /= n;
  m.chip_error_rate /= n;
  m.prr /= n;
  m.detection_rate /= n;
  m.nmse_body = link.nmse_body;
  m.violated_bit_count = link.solution.report.violated_positions.size();
  m.perturbed_subcarriers = link.solution.report.perturbed_subcarriers.size();
  m.evm = link.evm;
  m.phase_mse = link.phase_mse;
  const double airtime = static_cast<double>(link.tx.waveform.size() + cfg.lead_in_samples) /
                         dsp::kWifiSampleRateHz;
  m.goodput_bps = airtime > 0.0 ? 8.0 * static_cast<double>(link.payload.size()) * m.prr / airtime : 0.0;
  return m;
}

std::vector<Metrics> run_pipeline(const ExperimentConfig& cfg) {
  const PreparedLink link = prepare_link(cfg);
  std::vector<Metrics> out;
  for (std::size_t i = 0; i < cfg.snr_db.size(); ++i) out.push_back(evaluate(link, cfg, cfg.snr_db[i], i));
  return out;
}

std::vector<SweepRow> sweep(const ExperimentConfig& cfg, const SweepGrid& grid) {
  const std::vector<double> snrs = grid.snr_db.empty() ? cfg.snr_db : grid.snr_db;
  const std::vector<QuantizerMode> modes =
      grid.quantizers.empty() ? std::vector<QuantizerMode>{cfg.quantizer} : grid.quantizers;
  std::vector<std::size_t> lens = grid.payload_lens;
  if (snrs.empty()) throw ConfigError("sweep grid has no SNR points");
  std::vector<SweepRow> rows;
  for (const auto q : modes) {
    const std::size_t n_lens = lens.empty() ? 1 : lens.size();
    for (std::size_t li = 0; li < n_lens; ++li) {
      ExperimentConfig c = cfg;
      c.quantizer = q;
      c.snr_db = snrs;
      if (!lens.empty()) {
        c.payload.clear();
        c.payload_len = lens[li];
      }
      const auto metrics = run_pipeline(c);
      const std::size_t len = resolved_payload(c).size();
      for (const auto& m : metrics) rows.push_back({q, len, m});
    }
  }
  return rows;
}

namespace {

const char* kCsvHeader =
    "quantizer,payload_len,snr_db,trials,ser,prr,detection_rate,chip_error_rate,nmse_body,"
    "violated_bit_count,perturbed_subcarriers,evm,phase_mse,goodput_bps";

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ConfigError("csv: bad number '" + s + "'");
  return v;
}

std::size_t parse_size(const std::string& s) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw ConfigError("csv: bad integer '" + s + "'");
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw ConfigError("csv: bad integer '" + s + "'");
  }
}

}  // namespace

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    os << to_string(r.quantizer) << ',' << r.payload_len << ',' << fmt(m.snr_db) << ',' << m.trials << ','
       << fmt(m.ser) << ',' << fmt(m.prr) << ',' << fmt(m.detection_rate) << ',' << fmt(m.chip_error_rate)
       << ',' << fmt(m.nmse_body) << ',' << m.violated_bit_count << ',' << m.perturbed_subcarriers << ','
       << fmt(m.evm) << ',' << fmt(m.phase_mse) << ',' << fmt(m.goodput_bps) << '\n';
  }
  return os.str();
}

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw ConfigError("csv: unexpected header");
  std::vector<SweepRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 14) throw ConfigError("csv: expected 14 fields, got " + std::to_string(f.size()));
    SweepRow r;
    r.quantizer = parse_quantizer_mode(f[0]);
    r.payload_len = parse_size(f[1]);
    auto& m = r.metrics;
    m.snr_db = parse_double(f[2]);
    m.trials = parse_size(f[3]);
    m.ser = parse_double(f[4]);
    m.prr = parse_double(f[5]);
    m.detection_rate = parse_double(f[6]);
    m.chip_error_rate = parse_double(f[7]);
    m.nmse_body = parse_double(f[8]);
    m.violated_bit_count = parse_size(f[9]);
    m.perturbed_subcarriers = parse_size(f[10]);
    m.evm = parse_double(f[11]);
    m.phase_mse = parse_double(f[12]);
    m.goodput_bps = parse_double(f[13]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace ctc::sim
