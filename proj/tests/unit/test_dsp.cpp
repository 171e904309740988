#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ctc/dsp.hpp"
#include "oracles.hpp"

using namespace ctc;

namespace {

CVec random_block(dsp::Rng& rng, std::size_t n = 64) {
  CVec x(n);
  for (auto& v : x) v = {rng.gaussian(), rng.gaussian()};
  return x;
}

double max_abs_diff(const CVec& a, const CVec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("dft of a delta is flat") {
  CVec x(64, 0.0);
  x[0] = 1.0;
  for (const auto& v : dsp::dft(x)) CHECK(std::abs(v - cd(1.0, 0.0)) < 1e-12);
}

TEST_CASE("dft of all ones concentrates in bin zero") {
  const CVec X = dsp::dft(CVec(64, 1.0));
  CHECK(std::abs(X[0] - cd(64.0, 0.0)) < 1e-12);
  for (std::size_t k = 1; k < 64; ++k) CHECK(std::abs(X[k]) < 1e-12);
}

TEST_CASE("idft carries the 1/N factor") {
  CVec X(64, 0.0);
  X[0] = 64.0;
  for (const auto& v : dsp::idft(X)) CHECK(std::abs(v - cd(1.0, 0.0)) < 1e-12);
  for (const auto& v : dsp::idft(CVec(64, 0.0))) CHECK(v == cd(0.0, 0.0));
}

TEST_CASE("dft and idft match the textbook sums and invert each other") {
  dsp::Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const CVec x = random_block(rng);
    const CVec X = dsp::dft(x);
    const CVec ref = oracle::naive_dft(x);
    double scale = 0.0;
    for (const auto& v : ref) scale = std::max(scale, std::abs(v));
    CHECK(max_abs_diff(X, ref) <= 1e-12 * scale);
    CHECK(max_abs_diff(dsp::idft(X), x) < 1e-9);
    CHECK(max_abs_diff(dsp::dft(dsp::idft(x)), x) < 1e-9);
    CHECK(max_abs_diff(dsp::idft(x), oracle::naive_idft(x)) < 1e-12);
  }
}

TEST_CASE("dft rejects the wrong length") {
  CHECK_THROWS_AS(dsp::dft(CVec(63)), DimensionError);
  CHECK_THROWS_AS(dsp::idft(CVec(65)), DimensionError);
}

TEST_CASE("frequency shift") {
  dsp::Rng rng(3);
  const dsp::ComplexSignal sig(random_block(rng, 640), 20e6);

  SUBCASE("zero shift is the identity") {
    CHECK(dsp::frequency_shift(sig, 0.0).samples == sig.samples);
  }
  SUBCASE("shifting back restores the signal and power is kept") {
    const auto up = dsp::frequency_shift(sig, 1.7e6);
    const auto back = dsp::frequency_shift(up, -1.7e6);
    CHECK(max_abs_diff(back.samples, sig.samples) < 1e-12);
    CHECK(std::abs(up.mean_power() - sig.mean_power()) <= 1e-12 * sig.mean_power());
    CHECK(up.sample_rate_hz == sig.sample_rate_hz);
    CHECK(up.size() == sig.size());
  }
  SUBCASE("a 1 MHz tone moved by 2 MHz peaks at 3 MHz") {
    CVec tone(64);
    for (std::size_t n = 0; n < 64; ++n) tone[n] = std::polar(1.0, 2.0 * kPi * 1e6 * double(n) / 20e6);
    const auto shifted = dsp::frequency_shift(dsp::ComplexSignal(tone, 20e6), 2e6);
    const CVec X = oracle::naive_dft(shifted.samples);
    std::size_t peak = 0;
    for (std::size_t k = 1; k < 64; ++k) {
      if (std::abs(X[k]) > std::abs(X[peak])) peak = k;
    }
    // 3 MHz / 312.5 kHz = 9.6 -> nearest bin 10
    CHECK(peak == 10);
  }
}

TEST_CASE("awgn") {
  dsp::Rng rng(5);
  CVec s(100000);
  for (auto& v : s) v = std::polar(1.0, 2.0 * kPi * rng.uniform());
  const dsp::ComplexSignal sig(s, 20e6);

  SUBCASE("infinite SNR is the identity") {
    dsp::Rng r(1);
    CHECK(dsp::awgn(sig, dsp::kNoiseless, r).samples == sig.samples);
  }
  SUBCASE("same seed gives identical noise") {
    dsp::Rng a(42), b(42);
    CHECK(dsp::awgn(sig, 3.0, a).samples == dsp::awgn(sig, 3.0, b).samples);
  }
  SUBCASE("empirical SNR at 10 dB") {
    dsp::Rng r(9);
    const auto noisy = dsp::awgn(sig, 10.0, r);
    double pn = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) pn += std::norm(noisy.samples[i] - s[i]);
    pn /= double(s.size());
    const double snr = 10.0 * std::log10(sig.mean_power() / pn);
    CHECK(std::abs(snr - 10.0) < 0.5);
  }
  SUBCASE("zero power is a domain error") {
    dsp::Rng r(1);
    CHECK_THROWS_AS(dsp::awgn(dsp::ComplexSignal(CVec(10, 0.0), 20e6), 10.0, r), DomainError);
  }
}

TEST_CASE("signal metrics") {
  dsp::Rng rng(8);
  const CVec u = random_block(rng);

  SUBCASE("identical signals") {
    const auto m = dsp::signal_metrics(u, u);
    CHECK(m.time_mse == 0.0);
    CHECK(m.nmse == 0.0);
    CHECK(m.phase_mse == 0.0);
  }
  SUBCASE("constant rotation") {
    CVec v = u;
    for (auto& x : v) x *= std::polar(1.0, 0.1);
    CHECK(std::abs(dsp::signal_metrics(u, v).phase_mse - 0.01) < 1e-9);
  }
  SUBCASE("parseval") {
    for (int t = 0; t < 100; ++t) {
      const CVec a = random_block(rng), b = random_block(rng);
      const double n = 64.0;
      const CVec A = oracle::naive_dft(a), B = oracle::naive_dft(b);
      double freq = 0.0;
      for (std::size_t k = 0; k < 64; ++k) freq += std::norm(A[k] - B[k]);
      freq /= n;
      const double lhs = n * dsp::signal_metrics(a, b).time_mse;
      CHECK(std::abs(lhs - freq) <= 1e-9 * freq);
    }
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(dsp::signal_metrics(u, CVec(3)), DimensionError);
  }
}

TEST_CASE("wrap phase lands in (-pi, pi]") {
  CHECK(dsp::wrap_phase(kPi) == doctest::Approx(kPi));
  CHECK(dsp::wrap_phase(-kPi) == doctest::Approx(kPi));
  CHECK(dsp::wrap_phase(3.0 * kPi / 2.0) == doctest::Approx(-kPi / 2.0));
  CHECK(dsp::wrap_phase(0.25) == doctest::Approx(0.25));
}

TEST_CASE("rng streams are reproducible and derived streams differ") {
  dsp::Rng a(77), b(77);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  dsp::Rng c = dsp::Rng(77).derive(1), d = dsp::Rng(77).derive(2);
  CHECK(c.next_u64() != d.next_u64());
  dsp::Rng e(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = e.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(e.below(7) < 7);
  }
}

TEST_CASE("freq grid maps subcarriers around a centred DC") {
  CHECK(dsp::FreqGrid::bin_of(0) == 32);
  CHECK(dsp::FreqGrid::bin_of(-32) == 0);
  CHECK(dsp::FreqGrid::bin_of(31) == 63);
  CHECK(dsp::FreqGrid::dft_index(-1) == 63);
  CHECK(dsp::FreqGrid::dft_index(5) == 5);
  dsp::FreqGrid g(2);
  g.subcarrier(1, -7) = {2.0, 1.0};
  const CVec nat = g.natural_row(1);
  CHECK(nat[57] == cd(2.0, 1.0));
  dsp::FreqGrid h(2);
  h.set_from_natural(1, nat);
  CHECK(h.subcarrier(1, -7) == cd(2.0, 1.0));
}

TEST_CASE("lowpass passes DC and rejects the stopband") {
  const auto taps = dsp::design_lowpass(1e6, 20e6, 255);
  REQUIRE(taps.size() == 255);
  double dc = 0.0;
  for (double t : taps) dc += t;
  CHECK(dc == doctest::Approx(1.0).epsilon(1e-3));
  CVec tone(2000);
  for (std::size_t n = 0; n < tone.size(); ++n) tone[n] = std::polar(1.0, 2.0 * kPi * 3e6 * double(n) / 20e6);
  const CVec y = dsp::filter_same(tone, taps);
  double p = 0.0;
  for (std::size_t n = 500; n < 1500; ++n) p += std::norm(y[n]);
  CHECK(p / 1000.0 < 1e-4);
}

TEST_CASE("cf32 round trip") {
  dsp::Rng rng(2);
  CVec x = random_block(rng, 100);
  for (auto& v : x) v = {static_cast<float>(v.real()), static_cast<float>(v.imag())};
  const auto path = std::filesystem::temp_directory_path() / "ctc_dsp_roundtrip.cf32";
  dsp::write_cf32(path, x);
  CHECK(std::filesystem::file_size(path) == 800);
  CHECK(dsp::read_cf32(path) == x);
  std::filesystem::remove(path);
}
