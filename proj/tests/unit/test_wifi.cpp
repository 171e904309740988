#include <doctest.h>

#include <map>
#include <set>

#include "ctc/wifi.hpp"
#include "oracles.hpp"

using namespace ctc;
using namespace ctc::wifi;

namespace {

Bits random_bits(dsp::Rng& rng, std::size_t n) {
  Bits b(n);
  for (auto& v : b) v = rng.bit();
  return b;
}

// Gray level tables from the 802.11 mapping tables, indexed by the axis bits
// read first-on-air first.
const std::map<unsigned, int> kLevels16 = {{0b00, -3}, {0b01, -1}, {0b11, 1}, {0b10, 3}};
const std::map<unsigned, int> kLevels64 = {{0b000, -7}, {0b001, -5}, {0b011, -3}, {0b010, -1},
                                           {0b110, 1},  {0b111, 3},  {0b101, 5},  {0b100, 7}};

}  // namespace

TEST_CASE("constellations follow the standard gray tables") {
  SUBCASE("bpsk") {
    const auto c = Constellation::make(Modulation::bpsk);
    const Bits b = {0, 1};
    const auto s = qam_map(b, c);
    CHECK(s[0] == cd(-1.0, 0.0));
    CHECK(s[1] == cd(1.0, 0.0));
  }
  SUBCASE("qpsk") {
    const auto c = Constellation::make(Modulation::qpsk);
    const Bits b = {0, 1};
    const auto s = qam_map(b, c);
    CHECK(std::abs(s[0] - cd(-1.0, 1.0) / std::sqrt(2.0)) < 1e-15);
  }
  SUBCASE("16-qam") {
    const auto c = Constellation::make(Modulation::qam16);
    for (unsigned j = 0; j < 16; ++j) {
      const cd want = cd(kLevels16.at(j >> 2), kLevels16.at(j & 3)) / std::sqrt(10.0);
      CHECK(std::abs(c.point(j) - want) < 1e-15);
    }
  }
  SUBCASE("64-qam") {
    const auto c = Constellation::make(Modulation::qam64);
    for (unsigned j = 0; j < 64; ++j) {
      const cd want = cd(kLevels64.at(j >> 3), kLevels64.at(j & 7)) / std::sqrt(42.0);
      CHECK(std::abs(c.point(j) - want) < 1e-15);
    }
    CHECK(c.max_axis() == doctest::Approx(7.0 / std::sqrt(42.0)));
  }
  SUBCASE("unit mean power and bijective labels") {
    for (auto m : {Modulation::bpsk, Modulation::qpsk, Modulation::qam16, Modulation::qam64}) {
      const auto c = Constellation::make(m);
      CHECK(c.size() == (1U << c.bits_per_symbol()));
      double p = 0.0;
      std::set<std::pair<double, double>> seen;
      for (const auto& v : c.points()) {
        p += std::norm(v);
        seen.insert({v.real(), v.imag()});
      }
      CHECK(std::abs(p / double(c.size()) - 1.0) < 1e-12);
      CHECK(seen.size() == c.size());
    }
  }
}

TEST_CASE("map and demap round trip") {
  dsp::Rng rng(1);
  for (auto m : {Modulation::bpsk, Modulation::qpsk, Modulation::qam16, Modulation::qam64}) {
    const auto c = Constellation::make(m);
    const Bits b = random_bits(rng, 600 * c.bits_per_symbol());
    CHECK(qam_demap(qam_map(b, c), c) == b);
  }
  const auto c16 = Constellation::make(Modulation::qam16);
  CHECK_THROWS_AS(qam_map(Bits(7), c16), DimensionError);
}

TEST_CASE("nearest point is the brute-force minimum") {
  dsp::Rng rng(2);
  const auto c = Constellation::make(Modulation::qpsk);
  for (int t = 0; t < 1000; ++t) {
    const cd z(rng.gaussian(), rng.gaussian());
    std::size_t best = 0;
    for (std::size_t j = 1; j < c.size(); ++j) {
      if (std::norm(z - c.point(j)) < std::norm(z - c.point(best))) best = j;
    }
    CHECK(c.nearest(z) == best);
  }
}

TEST_CASE("scrambler") {
  dsp::Rng rng(3);
  const Bits x = random_bits(rng, 500);
  CHECK(scramble(scramble(x, 0x5D), 0x5D) == x);

  const Bits seq = scramble(Bits(254, 0), 0x7F);
  const auto ref = oracle::lfsr_sequence(0x7F, 254);
  CHECK(seq == ref);
  const Bits head = {0, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 0};
  CHECK(Bits(seq.begin(), seq.begin() + 16) == head);
  for (std::size_t i = 0; i < 127; ++i) CHECK(seq[i] == seq[i + 127]);
  // Period is exactly 127: no shorter period divides it except 1.
  CHECK(Bits(seq.begin(), seq.begin() + 127) != Bits(127, seq[0]));

  CHECK(scramble(Bits(40, 0), 0x2B) == oracle::lfsr_sequence(0x2B, 40));
  CHECK_THROWS_AS(scramble(x, 0), DomainError);
}

TEST_CASE("convolutional encoder") {
  CHECK(convolutional_encode(Bits(30, 0), CodingRate::r1_2) == Bits(60, 0));
  const Bits impulse = {1, 0, 0, 0, 0, 0, 0};
  const Bits out = convolutional_encode(impulse, CodingRate::r1_2);
  REQUIRE(out.size() == 14);
  Bits a, b;
  for (std::size_t i = 0; i < 7; ++i) {
    a.push_back(out[2 * i]);
    b.push_back(out[2 * i + 1]);
  }
  CHECK(a == Bits{1, 0, 1, 1, 0, 1, 1});
  CHECK(b == Bits{1, 1, 1, 1, 0, 0, 1});

  dsp::Rng rng(4);
  const Bits x = random_bits(rng, 300);
  CHECK(convolutional_encode(x, CodingRate::r1_2) == oracle::conv_encode(x));

  SUBCASE("puncturing keeps the standard positions") {
    const Bits full = oracle::conv_encode(x);
    Bits p34, p23;
    const int keep34[6] = {1, 1, 1, 0, 0, 1};
    const int keep23[4] = {1, 1, 1, 0};
    for (std::size_t i = 0; i < full.size(); ++i) {
      if (keep34[i % 6]) p34.push_back(full[i]);
      if (keep23[i % 4]) p23.push_back(full[i]);
    }
    CHECK(convolutional_encode(x, CodingRate::r3_4) == p34);
    CHECK(convolutional_encode(x, CodingRate::r2_3) == p23);
    CHECK(p34.size() == 400);
  }
}

TEST_CASE("interleaver") {
  dsp::Rng rng(5);
  for (auto m : {Modulation::bpsk, Modulation::qpsk, Modulation::qam16, Modulation::qam64}) {
    McsConfig mcs{m, CodingRate::r1_2};
    const std::size_t n_cbps = mcs.n_cbps(), n_bpsc = mcs.n_bpsc();
    const Bits x = random_bits(rng, n_cbps);
    const Bits y = interleave(x, n_cbps, n_bpsc);
    CHECK(deinterleave(y, n_cbps, n_bpsc) == x);
    for (std::size_t k = 0; k < n_cbps; ++k) CHECK(y[oracle::interleave_index(k, n_cbps, n_bpsc)] == x[k]);

    std::set<std::size_t> image;
    for (std::size_t k = 0; k < n_cbps; ++k) {
      Bits e(n_cbps, 0);
      e[k] = 1;
      const Bits p = interleave(e, n_cbps, n_bpsc);
      for (std::size_t i = 0; i < n_cbps; ++i) {
        if (p[i]) image.insert(i);
      }
    }
    CHECK(image.size() == n_cbps);
  }
  CHECK(oracle::interleave_index(0, 48, 1) == 0);
  CHECK(oracle::interleave_index(1, 48, 1) == 3);
  Bits e(48, 0);
  e[1] = 1;
  CHECK(interleave(e, 48, 1)[3] == 1);
  CHECK_THROWS_AS(interleave(Bits(47), 48, 1), DimensionError);
}

TEST_CASE("subcarrier plan") {
  std::set<int> data(data_subcarriers().begin(), data_subcarriers().end());
  CHECK(data.size() == 48);
  int nulls = 0;
  for (int sc = -32; sc < 32; ++sc) {
    const bool d = is_data(sc), p = is_pilot(sc);
    CHECK(!(d && p));
    if (!d && !p) ++nulls;
  }
  CHECK(nulls == 12);
  CHECK(data_subcarriers().front() == -26);
  CHECK(data_index(-26) == 0);
  CHECK(data_index(26) == 47);
  CHECK_THROWS(data_index(-7));
}

TEST_CASE("pilot polarity sequence") {
  const auto s = oracle::lfsr_sequence(0x7F, 127);
  for (std::size_t n = 0; n < 127; ++n) CHECK(pilot_polarity(n) == (s[n] ? -1 : 1));
  CHECK(pilot_polarity(127) == pilot_polarity(0));
  const int head[8] = {1, 1, 1, 1, -1, -1, -1, 1};
  for (int n = 0; n < 8; ++n) CHECK(pilot_polarity(n) == head[n]);
}

TEST_CASE("byte bit order is lsb first") {
  const std::vector<std::uint8_t> b = {0x01, 0x80};
  const Bits bits = bytes_to_bits(b);
  CHECK(bits == Bits{1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1});
  CHECK(bits_to_bytes(bits) == b);
}

TEST_CASE("transmit chain") {
  dsp::Rng rng(6);
  for (auto m : {Modulation::bpsk, Modulation::qam16, Modulation::qam64}) {
    for (auto r : {CodingRate::r1_2, CodingRate::r3_4}) {
      const McsConfig mcs{m, r};
      std::vector<std::uint8_t> psdu(40);
      for (auto& v : psdu) v = static_cast<std::uint8_t>(rng.below(256));
      const TxFrame tx = modulate_psdu(psdu, mcs);
      const std::size_t n_sym = tx.n_ofdm_symbols();
      CHECK(n_sym == (psdu.size() * 8 + mcs.n_dbps() - 1) / mcs.n_dbps());
      CHECK(tx.waveform.size() == 80 * n_sym);
      CHECK(tx.waveform.samples == transmit_psdu(psdu, mcs).samples);

      const auto cons = mcs.constellation();
      double data_power = 0.0;
      for (std::size_t s = 0; s < n_sym; ++s) {
        CVec pts;
        for (int sc : data_subcarriers()) pts.push_back(tx.symbols.grid.subcarrier(s, sc));
        for (const auto& p : pts) data_power += std::norm(p);
        const Bits demapped = qam_demap(pts, cons);
        const Bits coded(tx.coded_bits.begin() + long(s * mcs.n_cbps()),
                         tx.coded_bits.begin() + long((s + 1) * mcs.n_cbps()));
        CHECK(demapped == coded);

        const int pol = pilot_polarity(polarity_index_for(s));
        for (std::size_t i = 0; i < 4; ++i) {
          CHECK(tx.symbols.grid.subcarrier(s, kPilotSubcarriers[i]) == cd(kPilotValues[i] * pol, 0.0));
        }
        for (int sc = -32; sc < 32; ++sc) {
          if (!is_data(sc) && !is_pilot(sc)) CHECK(tx.symbols.grid.subcarrier(s, sc) == cd(0.0, 0.0));
        }
        for (std::size_t n = 0; n < 16; ++n) {
          CHECK(tx.waveform.samples[s * 80 + n] == tx.waveform.samples[s * 80 + 64 + n]);
        }
        // The body is the IDFT of the grid.
        const CVec body(tx.waveform.samples.begin() + long(s * 80 + 16),
                        tx.waveform.samples.begin() + long(s * 80 + 80));
        const CVec back = oracle::naive_dft(body);
        const CVec nat = tx.symbols.grid.natural_row(s);
        double err = 0.0;
        for (std::size_t k = 0; k < 64; ++k) err = std::max(err, std::abs(back[k] - nat[k]));
        CHECK(err < 1e-9);
      }
      CHECK(std::abs(data_power / double(48 * n_sym) - 1.0) < 0.1);

      // Coded bits come from the reference encoder after scrambling.
      Bits data = tx.data_bits;
      const Bits scr = scramble(data, kDefaultScramblerSeed);
      const Bits enc = oracle::conv_encode(scr);
      if (r == CodingRate::r1_2) {
        for (std::size_t s = 0; s < n_sym; ++s) {
          const std::size_t n_cbps = mcs.n_cbps();
          for (std::size_t k = 0; k < n_cbps; ++k) {
            CHECK(tx.coded_bits[s * n_cbps + oracle::interleave_index(k, n_cbps, mcs.n_bpsc())] ==
                  enc[s * n_cbps + k]);
          }
        }
      }
    }
  }
}

TEST_CASE("data-bin power is unit on long random payloads") {
  dsp::Rng rng(7);
  std::vector<std::uint8_t> psdu(2000);
  for (auto& v : psdu) v = static_cast<std::uint8_t>(rng.below(256));
  const McsConfig mcs{Modulation::qam64, CodingRate::r1_2};
  const TxFrame tx = modulate_psdu(psdu, mcs);
  double p = 0.0;
  for (std::size_t s = 0; s < tx.n_ofdm_symbols(); ++s) {
    for (int sc : data_subcarriers()) p += std::norm(tx.symbols.grid.subcarrier(s, sc));
  }
  CHECK(std::abs(p / double(48 * tx.n_ofdm_symbols()) - 1.0) < 0.02);
}

TEST_CASE("the coding chain is affine over GF(2)") {
  dsp::Rng rng(8);
  const McsConfig mcs{Modulation::qam64, CodingRate::r1_2};
  const std::size_t n = 4 * mcs.n_dbps();
  const Bits zero = coding_chain(Bits(n, 0), mcs, kDefaultScramblerSeed);
  for (int t = 0; t < 20; ++t) {
    const Bits x1 = random_bits(rng, n), x2 = random_bits(rng, n);
    Bits x12(n);
    for (std::size_t i = 0; i < n; ++i) x12[i] = x1[i] ^ x2[i];
    const Bits f1 = coding_chain(x1, mcs, kDefaultScramblerSeed);
    const Bits f2 = coding_chain(x2, mcs, kDefaultScramblerSeed);
    const Bits f12 = coding_chain(x12, mcs, kDefaultScramblerSeed);
    for (std::size_t i = 0; i < f12.size(); ++i) CHECK((f12[i] ^ zero[i]) == ((f1[i] ^ zero[i]) ^ (f2[i] ^ zero[i])));
  }
}

TEST_CASE("coding chain object matches the batch chain symbol by symbol") {
  dsp::Rng rng(9);
  const McsConfig mcs{Modulation::qam16, CodingRate::r3_4};
  const Bits x = random_bits(rng, 5 * mcs.n_dbps());
  const Bits batch = coding_chain(x, mcs, 0x33);
  CodingChain chain(mcs, 0x33);
  Bits inc;
  for (std::size_t s = 0; s < 5; ++s) {
    const auto part = chain.push_symbol(std::span<const std::uint8_t>(x).subspan(s * mcs.n_dbps(), mcs.n_dbps()));
    inc.insert(inc.end(), part.begin(), part.end());
  }
  CHECK(inc == batch);
  CHECK_THROWS_AS(chain.push_symbol(Bits(3)), DimensionError);
  CHECK_THROWS_AS(CodingChain(mcs, 0), DomainError);
}
