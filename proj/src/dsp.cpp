#include "ctc/dsp.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>

namespace ctc::dsp {

namespace {

// Twiddles e^{-j 2 pi m / 64}; indexing by (n*k mod 64) keeps every product
// on the exact same 64 values the formula uses.
const std::array<cd, kFftSize>& twiddles() {
  static const std::array<cd, kFftSize> table = [] {
    std::array<cd, kFftSize> t{};
    for (std::size_t m = 0; m < kFftSize; ++m) {
      const double a = -2.0 * kPi * static_cast<double>(m) / kFftSize;
      t[m] = {std::cos(a), std::sin(a)};
    }
    return t;
  }();
  return table;
}

void require_block(std::span<const cd> x, const char* what) {
  if (x.size() != kFftSize) {
    throw DimensionError(std::string(what) + ": expected 64 samples, got " +
                         std::to_string(x.size()));
  }
}

}  // namespace

ComplexSignal::ComplexSignal(CVec s, double fs) : samples(std::move(s)), sample_rate_hz(fs) {
  validate();
}

double ComplexSignal::mean_power() const {
  if (samples.empty()) return 0.0;
  double p = 0.0;
  for (const auto& s : samples) p += std::norm(s);
  return p / static_cast<double>(samples.size());
}

void ComplexSignal::validate() const {
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
    throw DomainError("sample rate must be positive");
  }
  for (const auto& s : samples) {
    if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) {
      throw DomainError("signal contains non-finite samples");
    }
  }
}

std::size_t FreqGrid::bin_of(int subcarrier) {
  if (subcarrier < -32 || subcarrier > 31) {
    throw DomainError("subcarrier out of range: " + std::to_string(subcarrier));
  }
  return static_cast<std::size_t>(subcarrier + 32);
}

std::size_t FreqGrid::dft_index(int subcarrier) {
  if (subcarrier < -32 || subcarrier > 31) {
    throw DomainError("subcarrier out of range: " + std::to_string(subcarrier));
  }
  return static_cast<std::size_t>((subcarrier + 64) % 64);
}

CVec FreqGrid::natural_row(std::size_t sym) const {
  CVec out(kFftSize);
  for (int sc = -32; sc < 32; ++sc) out[dft_index(sc)] = subcarrier(sym, sc);
  return out;
}

void FreqGrid::set_from_natural(std::size_t sym, std::span<const cd> natural) {
  require_block(natural, "FreqGrid::set_from_natural");
  for (int sc = -32; sc < 32; ++sc) subcarrier(sym, sc) = natural[dft_index(sc)];
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * kPi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) return 0;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = engine_();
  while (v >= limit) v = engine_();
  return static_cast<std::size_t>(v % n);
}

Rng Rng::derive(std::uint64_t stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

CVec dft(std::span<const cd> block) {
  require_block(block, "dft");
  const auto& w = twiddles();
  CVec out(kFftSize);
  for (std::size_t k = 0; k < kFftSize; ++k) {
    cd acc = 0.0;
    for (std::size_t n = 0; n < kFftSize; ++n) acc += block[n] * w[(n * k) % kFftSize];
    out[k] = acc;
  }
  return out;
}

CVec idft(std::span<const cd> bins) {
  require_block(bins, "idft");
  const auto& w = twiddles();
  CVec out(kFftSize);
  for (std::size_t n = 0; n < kFftSize; ++n) {
    cd acc = 0.0;
    for (std::size_t k = 0; k < kFftSize; ++k) acc += bins[k] * std::conj(w[(n * k) % kFftSize]);
    out[n] = acc / static_cast<double>(kFftSize);
  }
  return out;
}

ComplexSignal frequency_shift(const ComplexSignal& sig, double delta_f_hz) {
  ComplexSignal out;
  out.sample_rate_hz = sig.sample_rate_hz;
  out.samples.resize(sig.size());
  const double step = 2.0 * kPi * delta_f_hz / sig.sample_rate_hz;
  for (std::size_t n = 0; n < sig.size(); ++n) {
    out.samples[n] = sig.samples[n] * std::polar(1.0, step * static_cast<double>(n));
  }
  return out;
}

ComplexSignal awgn(const ComplexSignal& sig, double snr_db, Rng& rng) {
  const double p = sig.mean_power();
  if (!(p > 0.0)) throw DomainError("awgn: signal has zero power");
  if (std::isinf(snr_db) && snr_db > 0) return sig;
  const double variance = p / std::pow(10.0, snr_db / 10.0);
  const double sigma = std::sqrt(variance / 2.0);
  ComplexSignal out = sig;
  for (auto& s : out.samples) {
    const double re = rng.gaussian();
    const double im = rng.gaussian();
    s += cd(sigma * re, sigma * im);
  }
  return out;
}

double wrap_phase(double phi) {
  double w = std::remainder(phi, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

SignalMetrics signal_metrics(std::span<const cd> u, std::span<const cd> v) {
  if (u.size() != v.size()) {
    throw DimensionError("signal_metrics: length mismatch " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  }
  SignalMetrics m;
  if (u.empty()) return m;
  double err = 0.0, ref = 0.0, ph = 0.0;
  for (std::size_t n = 0; n < u.size(); ++n) {
    err += std::norm(u[n] - v[n]);
    ref += std::norm(u[n]);
    const double d = std::arg(u[n] * std::conj(v[n]));
    ph += d * d;
  }
  const double n = static_cast<double>(u.size());
  m.time_mse = err / n;
  m.nmse = ref > 0.0 ? err / ref : (err > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  m.phase_mse = ph / n;
  return m;
}

SignalMetrics signal_metrics(const ComplexSignal& u, const ComplexSignal& v) {
  return signal_metrics(std::span<const cd>(u.samples), std::span<const cd>(v.samples));
}

std::vector<double> design_lowpass(double cutoff_hz, double fs_hz, std::size_t taps,
                                   double kaiser_beta) {
  if (taps % 2 == 0 || taps == 0) throw DomainError("lowpass: tap count must be odd");
  if (!(cutoff_hz > 0.0) || cutoff_hz >= fs_hz / 2.0) {
    throw DomainError("lowpass: cutoff must lie in (0, fs/2)");
  }
  std::vector<double> h(taps);
  const double fc = cutoff_hz / fs_hz;
  const double mid = static_cast<double>(taps - 1) / 2.0;
  const double norm = std::cyl_bessel_i(0.0, kaiser_beta);
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) {
    const double t = static_cast<double>(i) - mid;
    const double sinc = t == 0.0 ? 2.0 * fc : std::sin(2.0 * kPi * fc * t) / (kPi * t);
    const double r = t / mid;
    const double win = std::cyl_bessel_i(0.0, kaiser_beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / norm;
    h[i] = sinc * win;
    sum += h[i];
  }
  for (auto& v : h) v /= sum;
  return h;
}

CVec filter_same(std::span<const cd> x, std::span<const double> taps) {
  const std::size_t n = x.size();
  const std::size_t half = taps.size() / 2;
  CVec out(n);
  for (std::size_t i = 0; i < n; ++i) {
    cd acc = 0.0;
    // y[i] = sum_j h[j] x[i + half - j]
    const std::size_t j_lo = i + half >= n ? i + half - (n - 1) : 0;
    const std::size_t j_hi = std::min(taps.size() - 1, i + half);
    for (std::size_t j = j_lo; j <= j_hi; ++j) acc += taps[j] * x[i + half - j];
    out[i] = acc;
  }
  return out;
}

void write_cf32(const std::filesystem::path& path, std::span<const cd> samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  static_assert(std::endian::native == std::endian::little, "cf32 writer assumes little-endian host");
  std::vector<float> buf;
  buf.reserve(samples.size() * 2);
  for (const auto& s : samples) {
    buf.push_back(static_cast<float>(s.real()));
    buf.push_back(static_cast<float>(s.imag()));
  }
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

CVec read_cf32(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open for reading: " + path.string());
  const auto bytes = static_cast<std::size_t>(f.tellg());
  if (bytes % (2 * sizeof(float)) != 0) {
    throw DimensionError("cf32 file size is not a whole number of samples: " + path.string());
  }
  f.seekg(0);
  std::vector<float> buf(bytes / sizeof(float));
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  CVec out(buf.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {buf[2 * i], buf[2 * i + 1]};
  return out;
}

}  // namespace ctc::dsp
