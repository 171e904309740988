#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>

#include "ctc/dsp.hpp"

namespace ctc::zigbee {

inline constexpr double kChipRateHz = 2e6;
inline constexpr std::size_t kChipsPerSymbol = 32;
inline constexpr std::size_t kPreambleSymbols = 8;
inline constexpr std::size_t kSyncSymbols = kPreambleSymbols + 2;  // preamble + SFD
inline constexpr std::size_t kHeaderSymbols = kSyncSymbols + 2;    // + PHR
inline constexpr std::uint8_t kSfd = 0xA7;
inline constexpr std::size_t kMaxPayload = 127;

using ChipTable = std::array<std::array<std::uint8_t, kChipsPerSymbol>, 16>;

/// IEEE 802.15.4 2.4 GHz O-QPSK symbol-to-chip table, chip c0 first.
const ChipTable& chip_table();

/// PPDU as 4-bit symbols: preamble, SFD, PHR (length), payload; LS nibble first.
std::vector<std::uint8_t> build_frame(std::span<const std::uint8_t> payload);

std::vector<std::uint8_t> symbols_to_chips(std::span<const std::uint8_t> symbols);

/// Half-sine O-QPSK: even chips on I, odd chips on Q offset by one chip period.
/// Output length is chips * (fs / 2 MHz).
dsp::ComplexSignal oqpsk_modulate(std::span<const std::uint8_t> chips, double fs_hz = 20e6);

struct ChipDecisions {
  std::vector<double> soft;         // > 0 means chip 1
  std::vector<std::uint8_t> hard;
  double carrier_phase = 0.0;
};

/// Chip detector. Each chip's half-sine matched-filter output is read on its
/// axis (I for even chips, Q for odd) after removing the carrier phase. When
/// `carrier_phase` is not given it is estimated blindly from the squared
/// chip-peak phases (pi ambiguity left to frame sync). The signal is assumed
/// to start at chip 0.
ChipDecisions oqpsk_demodulate(const dsp::ComplexSignal& sig,
                               std::optional<double> carrier_phase = std::nullopt);

/// Max-correlation symbol decision over a 32-value soft (or +-1) window.
std::uint8_t decide_symbol(std::span<const double> soft_chips);

struct ReceiverConfig {
  /// Channel-select filter cutoff; <= 0 disables the filter.
  double channel_cutoff_hz = 1.0e6;
  std::size_t filter_taps = 255;
  /// Normalised preamble+SFD correlation needed to declare sync.
  double sync_threshold = 0.5;
};

struct DecodeResult {
  bool detected = false;
  std::optional<std::vector<std::uint8_t>> payload;
  /// Symbols after the SFD (PHR + payload) as decided.
  std::vector<std::uint8_t> symbols;
  std::optional<double> ser;
  std::optional<double> chip_error_rate;
  double sync_correlation = 0.0;
  std::size_t sync_offset = 0;
};

/// Receives one frame. Sync failure is a result state, not an error. When
/// `reference_payload` is given, SER is measured over PHR + payload symbols
/// and chip error rate over the whole reference PPDU.
DecodeResult decode_frame(const dsp::ComplexSignal& sig,
                          const std::vector<std::uint8_t>* reference_payload = nullptr,
                          const ReceiverConfig& cfg = {});

}  // namespace ctc::zigbee
