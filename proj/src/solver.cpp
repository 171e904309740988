#include "ctc/solver.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

namespace ctc::solver {

Gf2Matrix::Gf2Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), wpr_((cols + 63) / 64), words_(rows * wpr_, 0) {}

void Gf2Matrix::set(std::size_t r, std::size_t c, bool v) {
  auto& w = words_[r * wpr_ + c / 64];
  const std::uint64_t m = std::uint64_t{1} << (c % 64);
  w = v ? (w | m) : (w & ~m);
}

Bits Gf2Matrix::multiply(std::span<const std::uint8_t> x) const {
  if (x.size() != cols_) {
    throw DimensionError("Gf2Matrix::multiply: expected " + std::to_string(cols_) + " bits, got " +
                         std::to_string(x.size()));
  }
  std::vector<std::uint64_t> packed(wpr_, 0);
  for (std::size_t c = 0; c < cols_; ++c) {
    if (x[c] & 1U) packed[c / 64] |= std::uint64_t{1} << (c % 64);
  }
  Bits y(rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    std::uint64_t acc = 0;
    const auto row_words = row(r);
    for (std::size_t w = 0; w < wpr_; ++w) acc ^= row_words[w] & packed[w];
    y[r] = static_cast<std::uint8_t>(std::popcount(acc) & 1);
  }
  return y;
}

AffineMap build_generator(std::size_t n_payload_bits, const wifi::McsConfig& mcs,
                          std::uint8_t scrambler_seed) {
  const std::size_t n_dbps = mcs.n_dbps();
  const std::size_t n_sym = (n_payload_bits + n_dbps - 1) / n_dbps;
  const std::size_t padded = n_sym * n_dbps;
  Bits x(padded, 0);
  AffineMap m;
  m.c = wifi::coding_chain(x, mcs, scrambler_seed);
  m.G = Gf2Matrix(m.c.size(), n_payload_bits);
  for (std::size_t i = 0; i < n_payload_bits; ++i) {
    x[i] = 1;
    const Bits col = wifi::coding_chain(x, mcs, scrambler_seed);
    x[i] = 0;
    for (std::size_t r = 0; r < col.size(); ++r) {
      if (col[r] != m.c[r]) m.G.set(r, i, true);
    }
  }
  return m;
}

SolveReport gf2_solve(const Gf2Matrix& G, const CodedBitTarget& target, std::span<const std::uint8_t> c,
                      std::span<const std::size_t> order) {
  const std::size_t rows = G.rows();
  if (target.y.size() != rows || target.mask.size() != rows || c.size() != rows) {
    throw DimensionError("gf2_solve: y, mask and c must have one entry per row of G");
  }
  std::vector<std::size_t> natural;
  if (order.empty()) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (target.mask[r]) natural.push_back(r);
    }
    order = natural;
  }

  const std::size_t wpr = G.words_per_row();
  std::vector<std::uint64_t> basis;  // accepted rows, wpr words each
  std::vector<std::uint8_t> basis_rhs;
  std::vector<std::size_t> pivots;
  std::vector<std::uint64_t> work(wpr);

  for (const std::size_t r : order) {
    if (r >= rows) throw DimensionError("gf2_solve: row order index out of range");
    if (!target.mask[r]) continue;
    const auto src = G.row(r);
    std::copy(src.begin(), src.end(), work.begin());
    std::uint8_t rhs = (target.y[r] ^ c[r]) & 1U;
    for (std::size_t b = 0; b < pivots.size(); ++b) {
      const std::size_t p = pivots[b];
      if ((work[p / 64] >> (p % 64)) & 1U) {
        const std::uint64_t* brow = basis.data() + b * wpr;
        for (std::size_t w = 0; w < wpr; ++w) work[w] ^= brow[w];
        rhs ^= basis_rhs[b];
      }
    }
    std::size_t pivot = G.cols();
    for (std::size_t w = 0; w < wpr; ++w) {
      if (work[w]) {
        pivot = w * 64 + static_cast<std::size_t>(std::countr_zero(work[w]));
        break;
      }
    }
    if (pivot == G.cols()) continue;  // redundant or contradicting; checked below
    basis.insert(basis.end(), work.begin(), work.end());
    basis_rhs.push_back(rhs);
    pivots.push_back(pivot);
  }

  SolveReport rep;
  rep.x.assign(G.cols(), 0);
  for (std::size_t b = pivots.size(); b-- > 0;) {
    const std::uint64_t* brow = basis.data() + b * wpr;
    std::uint8_t v = basis_rhs[b];
    for (std::size_t col = 0; col < G.cols(); ++col) {
      if (col != pivots[b] && rep.x[col] && ((brow[col / 64] >> (col % 64)) & 1U)) v ^= 1U;
    }
    rep.x[pivots[b]] = v;
  }

  const Bits gx = G.multiply(rep.x);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!target.mask[r]) continue;
    if (((gx[r] ^ c[r]) & 1U) == (target.y[r] & 1U)) {
      ++rep.satisfied;
    } else {
      rep.violated_positions.push_back(r);
    }
  }
  return rep;
}

PayloadSolution solve_payload(const IndexGrid& grid, const wifi::McsConfig& mcs,
                              std::uint8_t scrambler_seed) {
  const std::size_t m = grid.subcarriers.size();
  if (grid.index.size() != grid.n_symbols * m) {
    throw DimensionError("solve_payload: index grid shape mismatch");
  }
  if (!grid.energy.empty() && grid.energy.size() != grid.index.size()) {
    throw DimensionError("solve_payload: energy grid shape mismatch");
  }
  if (grid.n_symbols == 0) throw DimensionError("solve_payload: empty grid");
  const wifi::Constellation cons = mcs.constellation();
  const std::size_t nb = cons.bits_per_symbol();
  std::vector<std::size_t> dpos(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (!wifi::is_data(grid.subcarriers[j])) {
      throw ConfigError("solve_payload: subcarrier " + std::to_string(grid.subcarriers[j]) +
                        " is not a data subcarrier");
    }
    dpos[j] = wifi::data_index(grid.subcarriers[j]);
  }
  for (auto v : grid.index) {
    if (v >= cons.size()) throw DimensionError("solve_payload: constellation index out of range");
  }

  const std::size_t n_dbps = mcs.n_dbps();
  const std::size_t n_cbps = mcs.n_cbps();
  const std::size_t n_bytes = grid.n_symbols * n_dbps / 8;
  const std::size_t n_free_total = n_bytes * 8;

  wifi::CodingChain chain(mcs, scrambler_seed);
  Bits psdu_bits;
  psdu_bits.reserve(grid.n_symbols * n_dbps);
  Bits zeros(n_dbps, 0);

  for (std::size_t s = 0; s < grid.n_symbols; ++s) {
    const std::size_t first = s * n_dbps;
    const std::size_t n_free = std::min(n_dbps, n_free_total > first ? n_free_total - first : 0);

    wifi::CodingChain probe = chain;
    const Bits c = probe.push_symbol(zeros);
    Gf2Matrix G(n_cbps, n_free);
    Bits e(n_dbps, 0);
    for (std::size_t i = 0; i < n_free; ++i) {
      e[i] = 1;
      probe = chain;
      const Bits col = probe.push_symbol(e);
      e[i] = 0;
      for (std::size_t r = 0; r < n_cbps; ++r) {
        if (col[r] != c[r]) G.set(r, i, true);
      }
    }

    CodedBitTarget t{Bits(n_cbps, 0), Bits(n_cbps, 0)};
    std::vector<std::size_t> sc_order(m);
    std::iota(sc_order.begin(), sc_order.end(), 0);
    if (!grid.energy.empty()) {
      std::stable_sort(sc_order.begin(), sc_order.end(), [&](std::size_t a, std::size_t b) {
        return grid.energy[s * m + a] > grid.energy[s * m + b];
      });
    }
    std::vector<std::size_t> order;
    for (const std::size_t j : sc_order) {
      const std::uint32_t label = grid.at(s, j);
      for (std::size_t i = 0; i < nb; ++i) {
        const std::size_t pos = dpos[j] * nb + i;
        t.y[pos] = cons.label_bit(label, i);
        t.mask[pos] = 1;
        order.push_back(pos);
      }
    }

    const SolveReport r = gf2_solve(G, t, c, order);
    Bits x(n_dbps, 0);
    std::copy(r.x.begin(), r.x.end(), x.begin());
    chain.push_symbol(x);
    psdu_bits.insert(psdu_bits.end(), x.begin(), x.end());
  }

  PayloadSolution sol;
  psdu_bits.resize(n_free_total);
  sol.psdu = wifi::bits_to_bytes(psdu_bits);
  sol.report.x = psdu_bits;

  // Re-encode through the transmit chain and compare what actually lands.
  const wifi::TxFrame tx = wifi::modulate_psdu(sol.psdu, mcs, scrambler_seed);
  if (tx.n_ofdm_symbols() != grid.n_symbols) {
    throw DimensionError("solve_payload: re-encoded symbol count mismatch");
  }
  for (std::size_t s = 0; s < grid.n_symbols; ++s) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::uint32_t want = grid.at(s, j);
      std::uint32_t got = 0;
      for (std::size_t i = 0; i < nb; ++i) {
        const std::size_t pos = s * n_cbps + dpos[j] * nb + i;
        const std::uint8_t bit = tx.coded_bits[pos];
        got = (got << 1) | bit;
        if (bit == cons.label_bit(want, i)) {
          ++sol.report.satisfied;
        } else {
          sol.report.violated_positions.push_back(pos);
        }
      }
      if (got != want) sol.report.perturbed_subcarriers.push_back({s, grid.subcarriers[j], want, got});
    }
  }
  std::sort(sol.report.violated_positions.begin(), sol.report.violated_positions.end());
  return sol;
}

}  // namespace ctc::solver
