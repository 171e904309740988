#include "ctc/wifi.hpp"

#include <algorithm>
#include <cmath>

namespace ctc::wifi {

namespace {

constexpr std::array<std::uint8_t, 6> kPuncture34 = {1, 1, 1, 0, 0, 1};
constexpr std::array<std::uint8_t, 4> kPuncture23 = {1, 1, 1, 0};

std::uint8_t scrambler_step(std::uint8_t& state) {
  const auto fb = static_cast<std::uint8_t>(((state >> 6) ^ (state >> 3)) & 1U);
  state = static_cast<std::uint8_t>(((state << 1) | fb) & 0x7F);
  return fb;
}

// Generators 133 and 171 (octal) as tap masks over (x_i, x_{i-1}, ..., x_{i-6}),
// bit 6 = current input.
constexpr unsigned kG0 = 0133;
constexpr unsigned kG1 = 0171;

std::uint8_t parity(unsigned v) { return static_cast<std::uint8_t>(__builtin_parity(v)); }

void puncture_into(Bits& out, std::span<const std::uint8_t> mother, CodingRate rate) {
  if (rate == CodingRate::r1_2) {
    out.insert(out.end(), mother.begin(), mother.end());
    return;
  }
  std::span<const std::uint8_t> pattern =
      rate == CodingRate::r3_4 ? std::span<const std::uint8_t>(kPuncture34)
                               : std::span<const std::uint8_t>(kPuncture23);
  for (std::size_t i = 0; i < mother.size(); ++i) {
    if (pattern[i % pattern.size()]) out.push_back(mother[i]);
  }
}

// Runs the encoder from `state` (last six inputs, newest in bit 5).
Bits encode_from(std::span<const std::uint8_t> bits, std::uint8_t& state, CodingRate rate) {
  Bits mother;
  mother.reserve(2 * bits.size());
  for (auto b : bits) {
    const unsigned reg = (static_cast<unsigned>(b & 1U) << 6) | state;
    mother.push_back(parity(reg & kG0));
    mother.push_back(parity(reg & kG1));
    state = static_cast<std::uint8_t>(reg >> 1);
  }
  Bits out;
  out.reserve(mother.size());
  puncture_into(out, mother, rate);
  return out;
}

std::vector<std::size_t> interleaver_permutation(std::size_t n_cbps, std::size_t n_bpsc) {
  const std::size_t s = std::max<std::size_t>(n_bpsc / 2, 1);
  std::vector<std::size_t> perm(n_cbps);
  for (std::size_t k = 0; k < n_cbps; ++k) {
    const std::size_t i = (n_cbps / 16) * (k % 16) + k / 16;
    const std::size_t j = s * (i / s) + (i + n_cbps - (16 * i) / n_cbps) % s;
    perm[k] = j;
  }
  return perm;
}

void check_interleaver_args(std::size_t len, std::size_t n_cbps, std::size_t n_bpsc) {
  if (n_cbps == 0 || n_cbps % 16 != 0 || n_bpsc == 0) {
    throw DimensionError("interleaver: n_cbps must be a positive multiple of 16");
  }
  if (len != n_cbps) {
    throw DimensionError("interleaver: expected " + std::to_string(n_cbps) + " bits, got " +
                         std::to_string(len));
  }
}

}  // namespace

std::string to_string(Modulation m) {
  switch (m) {
    case Modulation::bpsk: return "bpsk";
    case Modulation::qpsk: return "qpsk";
    case Modulation::qam16: return "qam16";
    case Modulation::qam64: return "qam64";
  }
  return "?";
}

std::string to_string(CodingRate r) {
  switch (r) {
    case CodingRate::r1_2: return "1/2";
    case CodingRate::r2_3: return "2/3";
    case CodingRate::r3_4: return "3/4";
  }
  return "?";
}

Modulation parse_modulation(std::string_view s) {
  if (s == "bpsk") return Modulation::bpsk;
  if (s == "qpsk") return Modulation::qpsk;
  if (s == "qam16" || s == "16qam") return Modulation::qam16;
  if (s == "qam64" || s == "64qam") return Modulation::qam64;
  throw ConfigError("unknown modulation " + std::string(s));
}

CodingRate parse_coding_rate(std::string_view s) {
  if (s == "1/2") return CodingRate::r1_2;
  if (s == "2/3") return CodingRate::r2_3;
  if (s == "3/4") return CodingRate::r3_4;
  throw ConfigError("unknown coding rate " + std::string(s));
}

Constellation Constellation::make(Modulation m) {
  Constellation c;
  c.mod_ = m;
  std::size_t axis_bits = 0;  // bits per axis; BPSK handled separately
  switch (m) {
    case Modulation::bpsk: c.bits_ = 1; c.k_mod_ = 1.0; break;
    case Modulation::qpsk: c.bits_ = 2; axis_bits = 1; c.k_mod_ = 1.0 / std::sqrt(2.0); break;
    case Modulation::qam16: c.bits_ = 4; axis_bits = 2; c.k_mod_ = 1.0 / std::sqrt(10.0); break;
    case Modulation::qam64: c.bits_ = 6; axis_bits = 3; c.k_mod_ = 1.0 / std::sqrt(42.0); break;
  }
  // Gray label -> PAM level: binary index from Gray, level = 2*idx - (L-1).
  auto level = [](unsigned gray, std::size_t nbits) {
    unsigned bin = gray;
    for (unsigned shift = 1; shift < nbits; shift <<= 1) bin ^= bin >> shift;
    const double levels = static_cast<double>(1U << nbits);
    return 2.0 * bin - (levels - 1.0);
  };
  const std::size_t n = std::size_t{1} << c.bits_;
  c.points_.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (m == Modulation::bpsk) {
      c.points_[j] = {j ? 1.0 : -1.0, 0.0};
    } else {
      const auto ib = static_cast<unsigned>(j >> axis_bits);
      const auto qb = static_cast<unsigned>(j & ((1U << axis_bits) - 1U));
      c.points_[j] = cd(level(ib, axis_bits), level(qb, axis_bits)) * c.k_mod_;
    }
  }
  c.max_axis_ = (m == Modulation::bpsk ? 1.0 : static_cast<double>((1U << axis_bits) - 1U)) * c.k_mod_;
  return c;
}

std::size_t Constellation::nearest(cd z) const {
  std::size_t best = 0;
  double best_d = std::norm(z - points_[0]);
  for (std::size_t j = 1; j < points_.size(); ++j) {
    const double d = std::norm(z - points_[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

std::size_t McsConfig::n_bpsc() const { return Constellation::make(modulation).bits_per_symbol(); }

std::size_t McsConfig::n_dbps() const {
  const std::size_t c = n_cbps();
  switch (coding_rate) {
    case CodingRate::r1_2: return c / 2;
    case CodingRate::r2_3: return c * 2 / 3;
    case CodingRate::r3_4: return c * 3 / 4;
  }
  return c / 2;
}

const std::array<int, kDataSubcarriers>& data_subcarriers() {
  static const std::array<int, kDataSubcarriers> table = [] {
    std::array<int, kDataSubcarriers> t{};
    std::size_t i = 0;
    for (int sc = -26; sc <= 26; ++sc) {
      if (sc == 0 || is_pilot(sc)) continue;
      t[i++] = sc;
    }
    return t;
  }();
  return table;
}

bool is_pilot(int sc) {
  return std::find(kPilotSubcarriers.begin(), kPilotSubcarriers.end(), sc) != kPilotSubcarriers.end();
}

bool is_data(int sc) { return sc >= -26 && sc <= 26 && sc != 0 && !is_pilot(sc); }

std::size_t data_index(int sc) {
  const auto& d = data_subcarriers();
  const auto it = std::find(d.begin(), d.end(), sc);
  if (it == d.end()) throw DomainError("not a data subcarrier: " + std::to_string(sc));
  return static_cast<std::size_t>(it - d.begin());
}

int pilot_polarity(std::size_t n) {
  static const std::array<int, 127> table = [] {
    std::array<int, 127> t{};
    std::uint8_t state = 0x7F;
    for (auto& p : t) p = scrambler_step(state) ? -1 : 1;
    return t;
  }();
  return table[n % 127];
}

Bits bytes_to_bits(std::span<const std::uint8_t> bytes) {
  Bits bits;
  bits.reserve(bytes.size() * 8);
  for (auto b : bytes) {
    for (int i = 0; i < 8; ++i) bits.push_back(static_cast<std::uint8_t>((b >> i) & 1U));
  }
  return bits;
}

std::vector<std::uint8_t> bits_to_bytes(std::span<const std::uint8_t> bits) {
  if (bits.size() % 8 != 0) throw DimensionError("bits_to_bytes: length not a multiple of 8");
  std::vector<std::uint8_t> out(bits.size() / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    out[i / 8] = static_cast<std::uint8_t>(out[i / 8] | ((bits[i] & 1U) << (i % 8)));
  }
  return out;
}

Bits scramble(std::span<const std::uint8_t> bits, std::uint8_t seed) {
  if ((seed & 0x7F) == 0) throw DomainError("scrambler seed must be non-zero");
  std::uint8_t state = seed & 0x7F;
  Bits out(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    out[i] = static_cast<std::uint8_t>((bits[i] & 1U) ^ scrambler_step(state));
  }
  return out;
}

Bits convolutional_encode(std::span<const std::uint8_t> bits, CodingRate rate) {
  std::uint8_t state = 0;
  return encode_from(bits, state, rate);
}

Bits interleave(std::span<const std::uint8_t> bits, std::size_t n_cbps, std::size_t n_bpsc) {
  check_interleaver_args(bits.size(), n_cbps, n_bpsc);
  const auto perm = interleaver_permutation(n_cbps, n_bpsc);
  Bits out(n_cbps);
  for (std::size_t k = 0; k < n_cbps; ++k) out[perm[k]] = bits[k];
  return out;
}

Bits deinterleave(std::span<const std::uint8_t> bits, std::size_t n_cbps, std::size_t n_bpsc) {
  check_interleaver_args(bits.size(), n_cbps, n_bpsc);
  const auto perm = interleaver_permutation(n_cbps, n_bpsc);
  Bits out(n_cbps);
  for (std::size_t k = 0; k < n_cbps; ++k) out[k] = bits[perm[k]];
  return out;
}

CVec qam_map(std::span<const std::uint8_t> bits, const Constellation& c) {
  const std::size_t nb = c.bits_per_symbol();
  if (bits.size() % nb != 0) {
    throw DimensionError("qam_map: " + std::to_string(bits.size()) +
                         " bits not divisible by " + std::to_string(nb));
  }
  CVec out(bits.size() / nb);
  for (std::size_t s = 0; s < out.size(); ++s) {
    std::size_t label = 0;
    for (std::size_t i = 0; i < nb; ++i) label = (label << 1) | (bits[s * nb + i] & 1U);
    out[s] = c.point(label);
  }
  return out;
}

Bits qam_demap(std::span<const cd> symbols, const Constellation& c) {
  const std::size_t nb = c.bits_per_symbol();
  Bits out;
  out.reserve(symbols.size() * nb);
  for (const auto& z : symbols) {
    const std::size_t j = c.nearest(z);
    for (std::size_t i = 0; i < nb; ++i) out.push_back(c.label_bit(j, i));
  }
  return out;
}

CodingChain::CodingChain(const McsConfig& mcs, std::uint8_t scrambler_seed)
    : mcs_(mcs), scrambler_state_(static_cast<std::uint8_t>(scrambler_seed & 0x7F)) {
  if (scrambler_state_ == 0) throw DomainError("scrambler seed must be non-zero");
}

Bits CodingChain::push_symbol(std::span<const std::uint8_t> data_bits) {
  if (data_bits.size() != mcs_.n_dbps()) {
    throw DimensionError("CodingChain: expected " + std::to_string(mcs_.n_dbps()) + " bits, got " +
                         std::to_string(data_bits.size()));
  }
  Bits scrambled(data_bits.size());
  for (std::size_t i = 0; i < data_bits.size(); ++i) {
    scrambled[i] = static_cast<std::uint8_t>((data_bits[i] & 1U) ^ scrambler_step(scrambler_state_));
  }
  const Bits coded = encode_from(scrambled, encoder_state_, mcs_.coding_rate);
  return interleave(coded, mcs_.n_cbps(), mcs_.n_bpsc());
}

Bits coding_chain(std::span<const std::uint8_t> data_bits, const McsConfig& mcs,
                  std::uint8_t scrambler_seed) {
  const std::size_t n_dbps = mcs.n_dbps();
  if (data_bits.size() % n_dbps != 0) {
    throw DimensionError("coding_chain: bit count must be a multiple of n_dbps");
  }
  CodingChain chain(mcs, scrambler_seed);
  Bits out;
  out.reserve(data_bits.size() / n_dbps * mcs.n_cbps());
  for (std::size_t off = 0; off < data_bits.size(); off += n_dbps) {
    const Bits sym = chain.push_symbol(data_bits.subspan(off, n_dbps));
    out.insert(out.end(), sym.begin(), sym.end());
  }
  return out;
}

void fill_symbol(dsp::FreqGrid& grid, std::size_t sym, std::span<const cd> data_points,
                 std::size_t polarity_index) {
  if (data_points.size() != kDataSubcarriers) {
    throw DimensionError("fill_symbol: expected 48 data points");
  }
  auto row = grid.row(sym);
  std::fill(row.begin(), row.end(), cd(0.0, 0.0));
  const auto& d = data_subcarriers();
  for (std::size_t i = 0; i < kDataSubcarriers; ++i) grid.subcarrier(sym, d[i]) = data_points[i];
  const double p = pilot_polarity(polarity_index);
  for (std::size_t i = 0; i < kPilotSubcarriers.size(); ++i) {
    grid.subcarrier(sym, kPilotSubcarriers[i]) = kPilotValues[i] * p;
  }
}

CVec ofdm_symbol(std::span<const cd> centred_row) {
  if (centred_row.size() != dsp::kFftSize) throw DimensionError("ofdm_symbol: expected 64 bins");
  CVec natural(dsp::kFftSize);
  for (int sc = -32; sc < 32; ++sc) {
    natural[dsp::FreqGrid::dft_index(sc)] = centred_row[dsp::FreqGrid::bin_of(sc)];
  }
  const CVec body = dsp::idft(natural);
  CVec out;
  out.reserve(kSymbolLength);
  out.insert(out.end(), body.end() - kCpLength, body.end());
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

TxFrame modulate_psdu(std::span<const std::uint8_t> psdu, const McsConfig& mcs,
                      std::uint8_t scrambler_seed) {
  TxFrame f;
  const std::size_t n_dbps = mcs.n_dbps();
  f.data_bits = bytes_to_bits(psdu);
  const std::size_t n_sym = (f.data_bits.size() + n_dbps - 1) / n_dbps;
  f.data_bits.resize(n_sym * n_dbps, 0);
  f.coded_bits = coding_chain(f.data_bits, mcs, scrambler_seed);

  const Constellation c = mcs.constellation();
  const std::size_t n_cbps = mcs.n_cbps();
  f.symbols.grid = dsp::FreqGrid(n_sym);
  f.symbols.pilot_polarity_index.resize(n_sym);
  f.waveform.sample_rate_hz = dsp::kWifiSampleRateHz;
  f.waveform.samples.reserve(n_sym * kSymbolLength);
  for (std::size_t s = 0; s < n_sym; ++s) {
    const auto bits = std::span<const std::uint8_t>(f.coded_bits).subspan(s * n_cbps, n_cbps);
    const CVec points = qam_map(bits, c);
    const std::size_t pidx = polarity_index_for(s);
    f.symbols.pilot_polarity_index[s] = pidx;
    fill_symbol(f.symbols.grid, s, points, pidx);
    const CVec td = ofdm_symbol(f.symbols.grid.row(s));
    f.waveform.samples.insert(f.waveform.samples.end(), td.begin(), td.end());
  }
  return f;
}

dsp::ComplexSignal transmit_psdu(std::span<const std::uint8_t> psdu, const McsConfig& mcs,
                                 std::uint8_t scrambler_seed) {
  return modulate_psdu(psdu, mcs, scrambler_seed).waveform;
}

}  // namespace ctc::wifi
