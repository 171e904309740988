#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <span>

#include "ctc/common.hpp"

namespace ctc::dsp {

inline constexpr std::size_t kFftSize = 64;
inline constexpr double kWifiSampleRateHz = 20e6;
inline constexpr double kSubcarrierSpacingHz = kWifiSampleRateHz / kFftSize;
inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

/// Sampled complex baseband IQ.
struct ComplexSignal {
  CVec samples;
  double sample_rate_hz = kWifiSampleRateHz;

  ComplexSignal() = default;
  ComplexSignal(CVec s, double fs);

  std::size_t size() const { return samples.size(); }
  double mean_power() const;
  /// Throws DomainError on a non-positive rate or non-finite samples.
  void validate() const;
};

/// Per-OFDM-symbol 64-bin spectra in centred order: bin k holds subcarrier
/// k - 32, so DC sits at bin 32.
class FreqGrid {
 public:
  FreqGrid() = default;
  explicit FreqGrid(std::size_t n_symbols) : bins_(n_symbols * kFftSize) {}

  std::size_t n_symbols() const { return bins_.size() / kFftSize; }

  cd& bin(std::size_t sym, std::size_t k) { return bins_[sym * kFftSize + k]; }
  cd bin(std::size_t sym, std::size_t k) const { return bins_[sym * kFftSize + k]; }

  cd& subcarrier(std::size_t sym, int sc) { return bin(sym, bin_of(sc)); }
  cd subcarrier(std::size_t sym, int sc) const { return bin(sym, bin_of(sc)); }

  std::span<cd> row(std::size_t sym) { return {bins_.data() + sym * kFftSize, kFftSize}; }
  std::span<const cd> row(std::size_t sym) const {
    return {bins_.data() + sym * kFftSize, kFftSize};
  }

  /// Row reordered to natural DFT order (index (sc mod 64)).
  CVec natural_row(std::size_t sym) const;
  void set_from_natural(std::size_t sym, std::span<const cd> natural);

  static std::size_t bin_of(int subcarrier);
  /// DFT index (natural order) of a subcarrier.
  static std::size_t dft_index(int subcarrier);

 private:
  CVec bins_;
};

/// mt19937_64 seeded with the 64-bit seed. Uniforms take the top 53 bits of
/// each draw; normals use the Box-Muller transform on two uniforms, so the
/// stream is identical on every platform (std::normal_distribution is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Standard normal.
  double gaussian();
  std::size_t below(std::size_t n);
  std::uint8_t bit() { return static_cast<std::uint8_t>(next_u64() >> 63); }

  /// Independent substream keyed by (seed, stream) via splitmix64 mixing.
  Rng derive(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Unnormalised 64-point DFT evaluated directly from the definition.
CVec dft(std::span<const cd> block);
/// 64-point inverse DFT carrying the 1/64 factor.
CVec idft(std::span<const cd> bins);

ComplexSignal frequency_shift(const ComplexSignal& sig, double delta_f_hz);

/// Adds circular complex Gaussian noise at the given SNR relative to the mean
/// power of `sig`. An infinite SNR returns the input unchanged.
ComplexSignal awgn(const ComplexSignal& sig, double snr_db, Rng& rng);

struct SignalMetrics {
  double time_mse = 0.0;
  double nmse = 0.0;
  double phase_mse = 0.0;
};

SignalMetrics signal_metrics(std::span<const cd> u, std::span<const cd> v);
SignalMetrics signal_metrics(const ComplexSignal& u, const ComplexSignal& v);

/// Principal value in (-pi, pi].
double wrap_phase(double phi);

/// Linear-phase low-pass FIR (Kaiser-windowed sinc), odd length.
std::vector<double> design_lowpass(double cutoff_hz, double fs_hz, std::size_t taps,
                                   double kaiser_beta = 6.0);
/// Zero-delay ("same") convolution with an odd-length symmetric filter.
CVec filter_same(std::span<const cd> x, std::span<const double> taps);

// cf32: interleaved little-endian float32 I/Q.
void write_cf32(const std::filesystem::path& path, std::span<const cd> samples);
CVec read_cf32(const std::filesystem::path& path);

}  // namespace ctc::dsp
