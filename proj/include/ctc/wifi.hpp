#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "ctc/dsp.hpp"

namespace ctc::wifi {

enum class Modulation { bpsk, qpsk, qam16, qam64 };
enum class CodingRate { r1_2, r2_3, r3_4 };

std::string to_string(Modulation m);
std::string to_string(CodingRate r);
Modulation parse_modulation(std::string_view s);
CodingRate parse_coding_rate(std::string_view s);

/// Gray-labelled 802.11 constellation. Point index j carries label j, whose
/// bits read MSB-first are b0 b1 ... (b0 is the first bit on air).
class Constellation {
 public:
  static Constellation make(Modulation m);

  Modulation modulation() const { return mod_; }
  std::size_t bits_per_symbol() const { return bits_; }
  std::size_t size() const { return points_.size(); }
  double k_mod() const { return k_mod_; }
  /// Largest normalised coordinate on either axis (e.g. 7/sqrt(42) for 64-QAM).
  double max_axis() const { return max_axis_; }

  const CVec& points() const { return points_; }
  cd point(std::size_t j) const { return points_.at(j); }
  std::uint32_t label(std::size_t j) const { return static_cast<std::uint32_t>(j); }
  /// Bit i (i = 0 first on air) of the label of point j.
  std::uint8_t label_bit(std::size_t j, std::size_t i) const {
    return static_cast<std::uint8_t>((j >> (bits_ - 1 - i)) & 1U);
  }
  /// Nearest point, ties to the lowest index.
  std::size_t nearest(cd z) const;

 private:
  Modulation mod_ = Modulation::bpsk;
  std::size_t bits_ = 1;
  double k_mod_ = 1.0;
  double max_axis_ = 1.0;
  CVec points_;
};

struct McsConfig {
  Modulation modulation = Modulation::qam64;
  CodingRate coding_rate = CodingRate::r1_2;

  std::size_t n_bpsc() const;
  std::size_t n_cbps() const { return 48 * n_bpsc(); }
  std::size_t n_dbps() const;
  Constellation constellation() const { return Constellation::make(modulation); }
};

inline constexpr std::size_t kDataSubcarriers = 48;
inline constexpr std::array<int, 4> kPilotSubcarriers = {-21, -7, 7, 21};
inline constexpr std::array<double, 4> kPilotValues = {1.0, 1.0, 1.0, -1.0};
inline constexpr std::size_t kCpLength = 16;
inline constexpr std::size_t kSymbolLength = 80;
inline constexpr std::uint8_t kDefaultScramblerSeed = 0b1011101;

/// Data subcarriers -26..26 without DC and pilots, in mapping order.
const std::array<int, kDataSubcarriers>& data_subcarriers();
bool is_pilot(int sc);
bool is_data(int sc);
/// Position of a data subcarrier in mapping order, or throws.
std::size_t data_index(int sc);
/// 127-periodic pilot polarity p_n (+1/-1).
int pilot_polarity(std::size_t n);

/// 802.11 bit order: LSB of each byte first.
Bits bytes_to_bits(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> bits_to_bytes(std::span<const std::uint8_t> bits);

/// XOR with the x^7 + x^4 + 1 sequence started from `seed` (non-zero, 7 bits).
Bits scramble(std::span<const std::uint8_t> bits, std::uint8_t seed);

/// K=7 (133, 171) encoder from the zero state, output A0 B0 A1 B1 ...,
/// punctured for rates 2/3 and 3/4.
Bits convolutional_encode(std::span<const std::uint8_t> bits, CodingRate rate);

Bits interleave(std::span<const std::uint8_t> bits, std::size_t n_cbps, std::size_t n_bpsc);
Bits deinterleave(std::span<const std::uint8_t> bits, std::size_t n_cbps, std::size_t n_bpsc);

CVec qam_map(std::span<const std::uint8_t> bits, const Constellation& c);
Bits qam_demap(std::span<const cd> symbols, const Constellation& c);

/// Scramble -> encode -> per-symbol interleave, one OFDM symbol at a time.
/// Copyable, so callers can probe the affine map from a given state.
class CodingChain {
 public:
  CodingChain(const McsConfig& mcs, std::uint8_t scrambler_seed);

  /// Consumes n_dbps data bits, returns n_cbps interleaved coded bits.
  Bits push_symbol(std::span<const std::uint8_t> data_bits);
  const McsConfig& mcs() const { return mcs_; }

 private:
  McsConfig mcs_;
  std::uint8_t scrambler_state_;
  std::uint8_t encoder_state_ = 0;  // last six scrambled input bits
};

/// Full chain over a whole number of OFDM symbols.
Bits coding_chain(std::span<const std::uint8_t> data_bits, const McsConfig& mcs,
                  std::uint8_t scrambler_seed);

struct OfdmSymbolGrid {
  dsp::FreqGrid grid;
  /// Index n of the polarity p_n applied to each symbol's pilots.
  std::vector<std::size_t> pilot_polarity_index;
};

/// Centred grid for one data symbol: data points, pilots, zero nulls.
void fill_symbol(dsp::FreqGrid& grid, std::size_t sym, std::span<const cd> data_points,
                 std::size_t polarity_index);
/// Pilot polarity index used for data symbol `sym` (the SIGNAL symbol takes p_0).
inline std::size_t polarity_index_for(std::size_t sym) { return sym + 1; }

/// 80-sample CP + body for one centred grid row.
CVec ofdm_symbol(std::span<const cd> centred_row);

struct TxFrame {
  Bits data_bits;          // PSDU bits plus zero padding
  Bits coded_bits;         // interleaved, concatenated over symbols
  OfdmSymbolGrid symbols;
  dsp::ComplexSignal waveform;
  std::size_t n_ofdm_symbols() const { return symbols.grid.n_symbols(); }
};

/// Data-field transmit chain. Pads the PSDU with zero bits to a whole number
/// of OFDM symbols.
TxFrame modulate_psdu(std::span<const std::uint8_t> psdu, const McsConfig& mcs,
                      std::uint8_t scrambler_seed = kDefaultScramblerSeed);
dsp::ComplexSignal transmit_psdu(std::span<const std::uint8_t> psdu, const McsConfig& mcs,
                                 std::uint8_t scrambler_seed = kDefaultScramblerSeed);

}  // namespace ctc::wifi
