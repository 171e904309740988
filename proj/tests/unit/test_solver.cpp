#include <doctest.h>

#include "ctc/solver.hpp"
#include "oracles.hpp"

using namespace ctc;
using namespace ctc::solver;

namespace {

Gf2Matrix from_rows(const std::vector<std::vector<int>>& rows) {
  Gf2Matrix g(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) g.set(r, c, rows[r][c] != 0);
  }
  return g;
}

// Fewest violated masked rows over every x, by enumeration.
std::size_t brute_min_violations(const Gf2Matrix& G, const Bits& y, const Bits& mask) {
  std::size_t best = G.rows() + 1;
  for (std::uint64_t v = 0; v < (1ULL << G.cols()); ++v) {
    Bits x(G.cols());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (v >> i) & 1U;
    const Bits gx = G.multiply(x);
    std::size_t bad = 0;
    for (std::size_t r = 0; r < G.rows(); ++r) bad += mask[r] && gx[r] != y[r];
    best = std::min(best, bad);
  }
  return best;
}

std::size_t gf2_rank(Gf2Matrix g) {
  std::size_t rank = 0;
  for (std::size_t c = 0; c < g.cols() && rank < g.rows(); ++c) {
    std::size_t p = rank;
    while (p < g.rows() && !g.get(p, c)) ++p;
    if (p == g.rows()) continue;
    for (std::size_t k = 0; k < g.cols(); ++k) {
      const bool a = g.get(rank, k), b = g.get(p, k);
      g.set(rank, k, b);
      g.set(p, k, a);
    }
    for (std::size_t r = 0; r < g.rows(); ++r) {
      if (r != rank && g.get(r, c)) {
        for (std::size_t k = 0; k < g.cols(); ++k) g.set(r, k, g.get(r, k) != g.get(rank, k));
      }
    }
    ++rank;
  }
  return rank;
}

Bits random_bits(dsp::Rng& rng, std::size_t n) {
  Bits b(n);
  for (auto& v : b) v = rng.bit();
  return b;
}

}  // namespace

TEST_CASE("matrix storage and product") {
  Gf2Matrix g(3, 130);
  g.set(0, 0, true);
  g.set(1, 129, true);
  g.set(2, 64, true);
  g.set(2, 65, true);
  CHECK(g.words_per_row() == 3);
  CHECK(g.get(1, 129));
  g.set(1, 129, false);
  CHECK(!g.get(1, 129));
  Bits x(130, 0);
  x[0] = 1;
  x[65] = 1;
  CHECK(g.multiply(x) == Bits{1, 0, 1});
  CHECK_THROWS_AS(g.multiply(Bits(3)), DimensionError);
}

TEST_CASE("identity system recovers the target") {
  dsp::Rng rng(1);
  Gf2Matrix I(40, 40);
  for (std::size_t i = 0; i < 40; ++i) I.set(i, i, true);
  const Bits y = random_bits(rng, 40);
  const auto r = gf2_solve(I, {y, Bits(40, 1)}, Bits(40, 0));
  CHECK(r.x == y);
  CHECK(r.satisfied == 40);
  CHECK(r.violated_positions.empty());
}

TEST_CASE("three by two example") {
  const auto G = from_rows({{1, 0}, {1, 1}, {0, 1}});
  SUBCASE("consistent target has an exact solution") {
    const Bits y = {1, 0, 1};
    const auto r = gf2_solve(G, {y, Bits(3, 1)}, Bits(3, 0));
    CHECK(r.x == Bits{1, 1});
    CHECK(r.violated_positions.empty());
    CHECK(brute_min_violations(G, y, Bits(3, 1)) == 0);
  }
  SUBCASE("inconsistent target leaves one row violated") {
    const Bits y = {1, 1, 1};
    const auto r = gf2_solve(G, {y, Bits(3, 1)}, Bits(3, 0));
    CHECK(r.satisfied == 2);
    REQUIRE(r.violated_positions.size() == 1);
    CHECK(r.violated_positions[0] == 2);
    CHECK(brute_min_violations(G, y, Bits(3, 1)) == 1);
  }
  SUBCASE("row priority decides which constraint gives way") {
    const Bits y = {1, 1, 1};
    const std::vector<std::size_t> order = {2, 1, 0};
    const auto r = gf2_solve(G, {y, Bits(3, 1)}, Bits(3, 0), order);
    REQUIRE(r.violated_positions.size() == 1);
    CHECK(r.violated_positions[0] == 0);
  }
  SUBCASE("affine offset") {
    const Bits c = {1, 0, 1};
    const auto r = gf2_solve(G, {Bits{0, 0, 0}, Bits(3, 1)}, c);
    const Bits gx = G.multiply(r.x);
    for (std::size_t i = 0; i < 3; ++i) CHECK((gx[i] ^ c[i]) == 0);
  }
}

TEST_CASE("unconstrained rows are ignored") {
  const auto G = from_rows({{1, 0}, {1, 1}, {0, 1}});
  const auto all_free = gf2_solve(G, {Bits{1, 1, 1}, Bits(3, 0)}, Bits(3, 0));
  CHECK(all_free.x == Bits{0, 0});
  CHECK(all_free.satisfied == 0);
  CHECK(all_free.violated_positions.empty());

  const auto partial = gf2_solve(G, {Bits{1, 1, 1}, Bits{1, 0, 1}}, Bits(3, 0));
  CHECK(partial.x == Bits{1, 1});
  CHECK(partial.violated_positions.empty());
  CHECK_THROWS_AS(gf2_solve(G, {Bits(2), Bits(3)}, Bits(3)), DimensionError);
}

TEST_CASE("random consistent systems are solved exactly") {
  dsp::Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const std::size_t rows = 1 + rng.below(60), cols = 1 + rng.below(80);
    Gf2Matrix G(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) G.set(r, c, rng.bit());
    }
    const Bits x0 = random_bits(rng, cols), c = random_bits(rng, rows);
    Bits y = G.multiply(x0);
    for (std::size_t r = 0; r < rows; ++r) y[r] ^= c[r];
    Bits mask = random_bits(rng, rows);
    const auto rep = gf2_solve(G, {y, mask}, c);
    const Bits gx = G.multiply(rep.x);
    std::size_t n_mask = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (mask[r]) {
        ++n_mask;
        CHECK((gx[r] ^ c[r]) == y[r]);
      }
    }
    CHECK(rep.satisfied == n_mask);
  }
}

TEST_CASE("small random systems match enumeration when inconsistent") {
  dsp::Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const std::size_t rows = 2 + rng.below(8), cols = 1 + rng.below(6);
    Gf2Matrix G(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) G.set(r, c, rng.bit());
    }
    const Bits y = random_bits(rng, rows);
    const auto rep = gf2_solve(G, {y, Bits(rows, 1)}, Bits(rows, 0));
    const std::size_t best = brute_min_violations(G, y, Bits(rows, 1));
    CHECK(rep.violated_positions.size() >= best);
    CHECK(rep.satisfied + rep.violated_positions.size() == rows);
    if (best == 0) CHECK(rep.violated_positions.empty());
    // Greedy acceptance: at least rank(G) rows are satisfied.
    CHECK(rep.satisfied >= gf2_rank(G));
  }
}

TEST_CASE("generator reproduces the coding chain") {
  dsp::Rng rng(4);
  for (auto m : {wifi::Modulation::bpsk, wifi::Modulation::qam64}) {
    const wifi::McsConfig mcs{m, wifi::CodingRate::r1_2};
    const std::size_t n_bits = 3 * mcs.n_dbps() - 16;
    const AffineMap map = build_generator(n_bits, mcs, wifi::kDefaultScramblerSeed);
    CHECK(map.G.cols() == n_bits);
    CHECK(map.G.rows() == 3 * mcs.n_cbps());
    CHECK(map.c.size() == map.G.rows());
    for (int t = 0; t < 5; ++t) {
      Bits x = random_bits(rng, n_bits);
      Bits padded = x;
      padded.resize(3 * mcs.n_dbps(), 0);
      const Bits want = wifi::coding_chain(padded, mcs, wifi::kDefaultScramblerSeed);
      Bits got = map.G.multiply(x);
      for (std::size_t r = 0; r < got.size(); ++r) got[r] ^= map.c[r];
      CHECK(got == want);
    }
    if (m == wifi::Modulation::qam64) {
      // A rate-1/2 code with whole-symbol inputs gives G full column rank.
      const AffineMap small = build_generator(mcs.n_dbps(), mcs, wifi::kDefaultScramblerSeed);
      CHECK(gf2_rank(small.G) == mcs.n_dbps());
    }
  }
}

TEST_CASE("solve_payload hits an achievable grid exactly") {
  dsp::Rng rng(5);
  const wifi::McsConfig mcs{wifi::Modulation::qam64, wifi::CodingRate::r1_2};
  const auto cons = mcs.constellation();
  // Take the indices a random PSDU produces, then ask for them back.
  std::vector<std::uint8_t> psdu(3 * mcs.n_dbps() / 8);
  for (auto& b : psdu) b = static_cast<std::uint8_t>(rng.below(256));
  const auto tx = wifi::modulate_psdu(psdu, mcs);
  IndexGrid grid;
  grid.n_symbols = tx.n_ofdm_symbols();
  grid.subcarriers = {-26, -20, -3, 1, 8, 15, 22, 26};
  for (std::size_t s = 0; s < grid.n_symbols; ++s) {
    for (int sc : grid.subcarriers) grid.index.push_back(static_cast<std::uint32_t>(cons.nearest(tx.symbols.grid.subcarrier(s, sc))));
  }
  const auto sol = solve_payload(grid, mcs);
  CHECK(sol.psdu.size() == psdu.size());
  CHECK(sol.report.violated_positions.empty());
  CHECK(sol.report.perturbed_subcarriers.empty());
  CHECK(sol.report.satisfied == grid.index.size() * 6);

  const auto again = wifi::modulate_psdu(sol.psdu, mcs);
  for (std::size_t s = 0; s < grid.n_symbols; ++s) {
    for (std::size_t j = 0; j < grid.subcarriers.size(); ++j) {
      CHECK(cons.nearest(again.symbols.grid.subcarrier(s, grid.subcarriers[j])) == grid.at(s, j));
    }
  }
}

TEST_CASE("solve_payload reports are consistent on over-constrained grids") {
  dsp::Rng rng(6);
  const wifi::McsConfig mcs{wifi::Modulation::qam64, wifi::CodingRate::r1_2};
  const auto cons = mcs.constellation();
  IndexGrid grid;
  grid.n_symbols = 4;
  for (int sc : wifi::data_subcarriers()) {
    if (sc >= -20 && sc <= 20) grid.subcarriers.push_back(sc);
  }
  for (std::size_t i = 0; i < grid.n_symbols * grid.subcarriers.size(); ++i) {
    grid.index.push_back(static_cast<std::uint32_t>(rng.below(64)));
    grid.energy.push_back(rng.uniform());
  }
  const auto sol = solve_payload(grid, mcs);
  const std::size_t constrained = grid.index.size() * 6;
  CHECK(sol.report.satisfied + sol.report.violated_positions.size() == constrained);
  CHECK(!sol.report.violated_positions.empty());

  const auto tx = wifi::modulate_psdu(sol.psdu, mcs);
  std::size_t mismatched = 0;
  for (std::size_t s = 0; s < grid.n_symbols; ++s) {
    for (std::size_t j = 0; j < grid.subcarriers.size(); ++j) {
      mismatched += cons.nearest(tx.symbols.grid.subcarrier(s, grid.subcarriers[j])) != grid.at(s, j);
    }
  }
  CHECK(mismatched == sol.report.perturbed_subcarriers.size());
  for (const auto& p : sol.report.perturbed_subcarriers) CHECK(p.intended != p.achieved);
}

TEST_CASE("solve_payload input checks") {
  const wifi::McsConfig mcs{wifi::Modulation::qam16, wifi::CodingRate::r1_2};
  IndexGrid grid;
  grid.n_symbols = 1;
  grid.subcarriers = {-21};
  grid.index = {0};
  CHECK_THROWS_AS(solve_payload(grid, mcs), ConfigError);
  grid.subcarriers = {-20};
  grid.index = {16};
  CHECK_THROWS_AS(solve_payload(grid, mcs), DimensionError);
  grid.index = {1, 2};
  CHECK_THROWS_AS(solve_payload(grid, mcs), DimensionError);
}
