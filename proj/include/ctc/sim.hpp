#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctc/dsp.hpp"
#include "ctc/nn.hpp"
#include "ctc/solver.hpp"
#include "ctc/wifi.hpp"
#include "ctc/zigbee.hpp"

namespace ctc::sim {

enum class QuantizerMode { nnctc, webee, wide, nn_webee };
std::string to_string(QuantizerMode m);
QuantizerMode parse_quantizer_mode(std::string_view s);

struct ExperimentConfig {
  /// Explicit payload; when empty, `payload_len` bytes are drawn from the seed.
  std::vector<std::uint8_t> payload;
  std::size_t payload_len = 32;
  double delta_f_hz = -3.125e6;
  wifi::McsConfig mcs{};
  std::uint8_t scrambler_seed = wifi::kDefaultScramblerSeed;
  nn::EmulationMode emulation_mode = nn::EmulationMode::analog;
  QuantizerMode quantizer = QuantizerMode::nnctc;
  /// Empty = the 7 data subcarriers nearest delta_f.
  std::vector<int> subcarriers;
  std::vector<double> snr_db{dsp::kNoiseless};
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  nn::TrainConfig train{};
  double tau = 1.0;
  bool train_tau = false;
  /// Scales for nn-webee come from this model file.
  std::string model_path;
  /// Dead air ahead of the WiFi frame at the receiver.
  std::size_t lead_in_samples = 0;
  zigbee::ReceiverConfig receiver{};
  std::size_t threads = 0;  // 0 = hardware concurrency

  /// Throws ConfigError when the ZigBee main lobe leaves the WiFi band or
  /// a field is out of range.
  void validate() const;
};

/// The n data subcarriers closest to delta_f (pilots excluded), ascending.
std::vector<int> nearest_subcarriers(double delta_f_hz, std::size_t n = 7);
std::vector<int> resolved_subcarriers(const ExperimentConfig& cfg);
std::vector<std::uint8_t> resolved_payload(const ExperimentConfig& cfg);

/// ZigBee frame at 20 MSa/s shifted to delta_f, zero-padded to 80-sample blocks.
dsp::ComplexSignal make_target(std::span<const std::uint8_t> payload, double delta_f_hz);

/// Constellation indices on the target subcarriers for the fixed-rule
/// quantizers. nn-webee requires `scales`.
solver::IndexGrid baseline_quantize(const dsp::ComplexSignal& target, QuantizerMode mode,
                                    const std::vector<int>& subcarriers, const wifi::Constellation& c,
                                    const std::optional<nn::QuantizerParams>& scales = std::nullopt);

struct Metrics {
  double snr_db = 0.0;
  std::size_t trials = 0;
  double ser = 0.0;
  double prr = 0.0;
  double detection_rate = 0.0;
  double chip_error_rate = 0.0;
  double nmse_body = 0.0;
  std::size_t violated_bit_count = 0;
  std::size_t perturbed_subcarriers = 0;
  double evm = 0.0;
  double phase_mse = 0.0;
  /// payload bits * prr / frame airtime; own framing, not comparable to
  /// hardware goodput figures.
  double goodput_bps = 0.0;
};

/// Everything upstream of the channel for one configuration.
struct PreparedLink {
  std::vector<std::uint8_t> payload;
  dsp::ComplexSignal target;
  solver::IndexGrid grid;
  solver::PayloadSolution solution;
  wifi::TxFrame tx;
  std::optional<nn::TrainResult> training;
  std::optional<nn::QuantizerParams> quantizer;
  double nmse_body = 0.0;
  double evm = 0.0;
  double phase_mse = 0.0;
};

/// Target -> quantize -> solve -> transmit. nnctc trains a fresh model unless
/// `model` or the model file supplies one; nn-webee takes its scales from the
/// same place.
PreparedLink prepare_link(const ExperimentConfig& cfg, const nn::EmulationModel* model = nullptr,
                          nn::EmulationModel* trained_out = nullptr);

struct TrialResult {
  bool detected = false;
  bool payload_ok = false;
  double ser = 1.0;
  double chip_error_rate = 1.0;
};

/// Channel and receiver for one trial; the noise stream depends only on
/// (seed, snr_index, trial) so every quantizer sees the same noise.
TrialResult run_trial(const PreparedLink& link, const ExperimentConfig& cfg, double snr_db,
                      std::size_t snr_index, std::size_t trial);

Metrics evaluate(const PreparedLink& link, const ExperimentConfig& cfg, double snr_db, std::size_t snr_index);

/// One Metrics entry per SNR point.
std::vector<Metrics> run_pipeline(const ExperimentConfig& cfg);

struct SweepGrid {
  std::vector<double> snr_db;
  std::vector<std::size_t> payload_lens;
  std::vector<QuantizerMode> quantizers;
};

struct SweepRow {
  QuantizerMode quantizer = QuantizerMode::nnctc;
  std::size_t payload_len = 0;
  Metrics metrics;
};

std::vector<SweepRow> sweep(const ExperimentConfig& cfg, const SweepGrid& grid);

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_csv(const std::string& text);

}  // namespace ctc::sim
