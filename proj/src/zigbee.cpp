#include "ctc/zigbee.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ctc::zigbee {

namespace {

// IEEE 802.15.4-2006 Table 73 (2450 MHz O-QPSK), transcribed row by row.
// Rows 1-7 are row 0 rotated right by 4*s chips; rows 8-15 are rows 0-7 with
// the odd-indexed chips inverted. tests/unit/test_zigbee.cpp checks both.
constexpr ChipTable kChipTable = {{
    {1, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0},
    {1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0},
    {0, 0, 1, 0, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0},
    {0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1},
    {0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1},
    {0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0},
    {1, 1, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 0, 1},
    {1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0, 1, 1, 0, 1},
    {1, 0, 0, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1},
    {1, 0, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1},
    {0, 1, 1, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1},
    {0, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0},
    {0, 0, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0},
    {0, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 1, 0, 0, 1},
    {1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0},
    {1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 0, 0, 0},
}};

std::size_t samples_per_chip(double fs_hz) {
  const double ratio = fs_hz / kChipRateHz;
  const auto spc = static_cast<std::size_t>(std::llround(ratio));
  if (spc == 0 || std::abs(ratio - static_cast<double>(spc)) > 1e-9) {
    throw ConfigError("sample rate must be an integer multiple of 2 MHz, got " +
                      std::to_string(fs_hz));
  }
  return spc;
}

std::vector<double> half_sine(std::size_t spc) {
  std::vector<double> p(2 * spc);
  for (std::size_t n = 0; n < p.size(); ++n) {
    p[n] = std::sin(kPi * static_cast<double>(n) / static_cast<double>(2 * spc));
  }
  return p;
}

// Complex half-sine matched-filter output for a pulse starting at every
// sample offset (zero-padded past the end).
CVec matched_filter(std::span<const cd> x, std::span<const double> pulse) {
  CVec out(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    cd acc = 0.0;
    const std::size_t lim = std::min(pulse.size(), x.size() - t);
    for (std::size_t n = 0; n < lim; ++n) acc += pulse[n] * x[t + n];
    out[t] = acc;
  }
  return out;
}

// Reference chip phasor: even chips ride I, odd chips ride Q.
cd chip_phasor(std::size_t k, std::uint8_t chip) {
  const double a = chip ? 1.0 : -1.0;
  return (k % 2 == 0) ? cd(a, 0.0) : cd(0.0, a);
}

double axis_projection(std::size_t k, cd derotated) {
  return (k % 2 == 0) ? derotated.real() : derotated.imag();
}

struct SyncPoint {
  std::size_t offset = 0;
  double rho = 0.0;
  cd corr{0.0, 0.0};
};

SyncPoint correlate_at(const CVec& mf, std::size_t t, std::size_t spc, const CVec& ref) {
  cd c = 0.0;
  double e = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    const cd m = mf[t + k * spc];
    c += m * std::conj(ref[k]);
    e += std::norm(m);
  }
  SyncPoint sp;
  sp.offset = t;
  sp.corr = c;
  sp.rho = e > 0.0 ? std::abs(c) / std::sqrt(e * static_cast<double>(ref.size())) : 0.0;
  return sp;
}

}  // namespace

const ChipTable& chip_table() { return kChipTable; }

std::vector<std::uint8_t> build_frame(std::span<const std::uint8_t> payload) {
  if (payload.size() > kMaxPayload) {
    throw DomainError("zigbee payload exceeds 127 bytes: " + std::to_string(payload.size()));
  }
  std::vector<std::uint8_t> sym;
  sym.reserve(kHeaderSymbols + 2 * payload.size());
  sym.insert(sym.end(), kPreambleSymbols, 0);
  auto push_byte = [&sym](std::uint8_t b) {
    sym.push_back(b & 0x0F);
    sym.push_back(static_cast<std::uint8_t>(b >> 4));
  };
  push_byte(kSfd);
  push_byte(static_cast<std::uint8_t>(payload.size()));
  for (auto b : payload) push_byte(b);
  return sym;
}

std::vector<std::uint8_t> symbols_to_chips(std::span<const std::uint8_t> symbols) {
  std::vector<std::uint8_t> chips;
  chips.reserve(symbols.size() * kChipsPerSymbol);
  for (auto s : symbols) {
    if (s > 15) throw DomainError("zigbee symbol out of range: " + std::to_string(s));
    const auto& row = kChipTable[s];
    chips.insert(chips.end(), row.begin(), row.end());
  }
  return chips;
}

dsp::ComplexSignal oqpsk_modulate(std::span<const std::uint8_t> chips, double fs_hz) {
  const std::size_t spc = samples_per_chip(fs_hz);
  const auto pulse = half_sine(spc);
  const std::size_t len = chips.size() * spc;
  CVec out(len, cd(0.0, 0.0));
  for (std::size_t k = 0; k < chips.size(); ++k) {
    const cd a = chip_phasor(k, chips[k]);
    const std::size_t start = k * spc;
    for (std::size_t n = 0; n < pulse.size() && start + n < len; ++n) {
      out[start + n] += a * pulse[n];
    }
  }
  return dsp::ComplexSignal(std::move(out), fs_hz);
}

ChipDecisions oqpsk_demodulate(const dsp::ComplexSignal& sig, std::optional<double> carrier_phase) {
  const std::size_t spc = samples_per_chip(sig.sample_rate_hz);
  const std::size_t n_chips = sig.size() / spc;
  if (n_chips == 0) throw DomainError("oqpsk_demodulate: signal shorter than one chip");
  const auto pulse = half_sine(spc);
  const double pulse_energy = std::accumulate(pulse.begin(), pulse.end(), 0.0,
                                              [](double a, double p) { return a + p * p; });

  CVec peaks(n_chips);
  for (std::size_t k = 0; k < n_chips; ++k) {
    cd acc = 0.0;
    const std::size_t start = k * spc;
    for (std::size_t n = 0; n < pulse.size() && start + n < sig.size(); ++n) {
      acc += pulse[n] * sig.samples[start + n];
    }
    peaks[k] = acc / pulse_energy;
  }

  ChipDecisions out;
  if (carrier_phase) {
    out.carrier_phase = *carrier_phase;
  } else {
    // Rotate odd chips back onto I, then square away the chip sign.
    cd acc = 0.0;
    for (std::size_t k = 0; k < n_chips; ++k) {
      const cd m = (k % 2 == 0) ? peaks[k] : peaks[k] * cd(0.0, -1.0);
      acc += m * m;
    }
    out.carrier_phase = 0.5 * std::arg(acc);
  }
  const cd derot = std::polar(1.0, -out.carrier_phase);
  out.soft.resize(n_chips);
  out.hard.resize(n_chips);
  for (std::size_t k = 0; k < n_chips; ++k) {
    out.soft[k] = axis_projection(k, peaks[k] * derot);
    out.hard[k] = out.soft[k] > 0.0 ? 1 : 0;
  }
  return out;
}

std::uint8_t decide_symbol(std::span<const double> soft_chips) {
  if (soft_chips.size() != kChipsPerSymbol) {
    throw DimensionError("decide_symbol: expected 32 chips, got " +
                         std::to_string(soft_chips.size()));
  }
  std::uint8_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::uint8_t s = 0; s < 16; ++s) {
    double score = 0.0;
    for (std::size_t k = 0; k < kChipsPerSymbol; ++k) {
      score += kChipTable[s][k] ? soft_chips[k] : -soft_chips[k];
    }
    if (score > best_score) {
      best_score = score;
      best = s;
    }
  }
  return best;
}

DecodeResult decode_frame(const dsp::ComplexSignal& sig,
                          const std::vector<std::uint8_t>* reference_payload,
                          const ReceiverConfig& cfg) {
  DecodeResult res;
  const std::size_t spc = samples_per_chip(sig.sample_rate_hz);

  std::vector<std::uint8_t> ref_symbols, ref_chips;
  if (reference_payload) {
    ref_symbols = build_frame(*reference_payload);
    ref_chips = symbols_to_chips(ref_symbols);
  }

  CVec x = sig.samples;
  if (cfg.channel_cutoff_hz > 0.0 && !x.empty()) {
    const auto taps = dsp::design_lowpass(cfg.channel_cutoff_hz, sig.sample_rate_hz, cfg.filter_taps);
    x = dsp::filter_same(x, taps);
  }
  const auto pulse = half_sine(spc);
  const CVec mf = matched_filter(x, pulse);

  std::vector<std::uint8_t> sync_symbols(kPreambleSymbols, 0);
  sync_symbols.push_back(kSfd & 0x0F);
  sync_symbols.push_back(kSfd >> 4);
  const auto sync_chips = symbols_to_chips(sync_symbols);
  CVec ref(sync_chips.size());
  for (std::size_t k = 0; k < ref.size(); ++k) ref[k] = chip_phasor(k, sync_chips[k]);

  const std::size_t span = ref.size() * spc;
  auto fail = [&](const SyncPoint* best) {
    res.detected = false;
    if (reference_payload) {
      res.ser = 1.0;
      std::size_t errors = ref_chips.size();
      if (best) {
        // Chip errors at the most plausible alignment, for a continuous metric.
        const cd derot = std::polar(1.0, -std::arg(best->corr));
        errors = 0;
        for (std::size_t k = 0; k < ref_chips.size(); ++k) {
          const std::size_t pos = best->offset + k * spc;
          if (pos >= mf.size()) {
            ++errors;
            continue;
          }
          const std::uint8_t hard = axis_projection(k, mf[pos] * derot) > 0.0 ? 1 : 0;
          errors += hard != ref_chips[k];
        }
      }
      res.chip_error_rate = static_cast<double>(errors) / static_cast<double>(ref_chips.size());
    }
    return res;
  };
  if (mf.size() < span) return fail(nullptr);

  const std::size_t last = mf.size() - span;
  SyncPoint best{};
  std::optional<SyncPoint> found;
  for (std::size_t t = 0; t <= last; ++t) {
    const SyncPoint sp = correlate_at(mf, t, spc, ref);
    if (sp.rho > best.rho) best = sp;
    if (sp.rho >= cfg.sync_threshold) {
      // Behind dead air the first crossing can be a partial alignment a few
      // preamble symbols early; the true peak is within one sync field.
      SyncPoint peak = sp;
      for (std::size_t u = t + 1; u <= std::min(last, t + span); ++u) {
        const SyncPoint cand = correlate_at(mf, u, spc, ref);
        if (cand.rho > peak.rho) peak = cand;
      }
      found = peak;
      break;
    }
  }
  res.sync_correlation = found ? found->rho : best.rho;
  res.sync_offset = found ? found->offset : best.offset;
  if (!found) return fail(best.rho > 0.0 ? &best : nullptr);

  res.detected = true;
  const std::size_t t0 = found->offset;
  const cd derot = std::polar(1.0, -std::arg(found->corr));
  double scale = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) scale += std::abs(mf[t0 + k * spc]);
  scale = scale > 0.0 ? scale / static_cast<double>(ref.size()) : 1.0;

  const std::size_t avail_chips = (mf.size() - t0 + spc - 1) / spc;
  auto soft_chip = [&](std::size_t k) {
    return axis_projection(k, mf[t0 + k * spc] * derot) / scale;
  };
  auto symbol_available = [&](std::size_t s) { return (s + 1) * kChipsPerSymbol <= avail_chips; };
  auto decide_at = [&](std::size_t s) {
    std::array<double, kChipsPerSymbol> w{};
    for (std::size_t k = 0; k < kChipsPerSymbol; ++k) w[k] = soft_chip(s * kChipsPerSymbol + k);
    return decide_symbol(w);
  };

  if (symbol_available(kHeaderSymbols - 1)) {
    const std::uint8_t lo = decide_at(kSyncSymbols);
    const std::uint8_t hi = decide_at(kSyncSymbols + 1);
    res.symbols = {lo, hi};
    const std::size_t length = (lo | (hi << 4)) & 0x7F;
    std::size_t want = 2 * length;
    if (reference_payload) want = std::max(want, ref_symbols.size() - kHeaderSymbols);
    bool complete = true;
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t s = kHeaderSymbols + i;
      if (!symbol_available(s)) {
        if (i < 2 * length) complete = false;
        break;
      }
      res.symbols.push_back(decide_at(s));
    }
    if (complete) {
      std::vector<std::uint8_t> bytes(length);
      for (std::size_t i = 0; i < length; ++i) {
        bytes[i] = static_cast<std::uint8_t>(res.symbols[2 + 2 * i] | (res.symbols[3 + 2 * i] << 4));
      }
      res.payload = std::move(bytes);
    }
  }

  if (reference_payload) {
    const std::size_t n_ref = ref_symbols.size() - kSyncSymbols;
    std::size_t errors = 0;
    for (std::size_t i = 0; i < n_ref; ++i) {
      if (i >= res.symbols.size() || res.symbols[i] != ref_symbols[kSyncSymbols + i]) ++errors;
    }
    res.ser = static_cast<double>(errors) / static_cast<double>(n_ref);
    std::size_t chip_errors = 0;
    for (std::size_t k = 0; k < ref_chips.size(); ++k) {
      if (k >= avail_chips) {
        ++chip_errors;
        continue;
      }
      chip_errors += (soft_chip(k) > 0.0 ? 1 : 0) != ref_chips[k];
    }
    res.chip_error_rate = static_cast<double>(chip_errors) / static_cast<double>(ref_chips.size());
  }
  return res;
}

}  // namespace ctc::zigbee
