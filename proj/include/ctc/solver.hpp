#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ctc/wifi.hpp"

namespace ctc::solver {

/// Dense row-major bit matrix, 64 columns per word.
class Gf2Matrix {
 public:
  Gf2Matrix() = default;
  Gf2Matrix(std::size_t rows, std::size_t cols);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t words_per_row() const { return wpr_; }

  bool get(std::size_t r, std::size_t c) const {
    return (words_[r * wpr_ + c / 64] >> (c % 64)) & 1U;
  }
  void set(std::size_t r, std::size_t c, bool v);

  std::span<const std::uint64_t> row(std::size_t r) const { return {words_.data() + r * wpr_, wpr_}; }
  std::span<std::uint64_t> row(std::size_t r) { return {words_.data() + r * wpr_, wpr_}; }

  /// G * x over GF(2).
  Bits multiply(std::span<const std::uint8_t> x) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t wpr_ = 0;
  std::vector<std::uint64_t> words_;
};

struct CodedBitTarget {
  Bits y;
  Bits mask;  // 1 = constrained
};

struct PerturbedSubcarrier {
  std::size_t ofdm_symbol = 0;
  int subcarrier = 0;
  std::uint32_t intended = 0;
  std::uint32_t achieved = 0;
};

struct SolveReport {
  Bits x;
  std::size_t satisfied = 0;
  std::vector<std::size_t> violated_positions;
  std::vector<PerturbedSubcarrier> perturbed_subcarriers;
};

struct AffineMap {
  Gf2Matrix G;
  Bits c;
};

/// chain(x) = G x + c for the scramble -> encode -> interleave chain. PSDU
/// bits past n_payload_bits up to a whole OFDM symbol are zero padding.
AffineMap build_generator(std::size_t n_payload_bits, const wifi::McsConfig& mcs,
                          std::uint8_t scrambler_seed);

/// Solves G x = y + c on the masked rows. Rows are taken in `order` (all
/// masked rows in index order when empty); a row that contradicts the rows
/// already accepted is reported as violated. Free variables are zero.
SolveReport gf2_solve(const Gf2Matrix& G, const CodedBitTarget& target, std::span<const std::uint8_t> c,
                      std::span<const std::size_t> order = {});

/// Constellation indices wanted on a set of subcarriers, one row per OFDM
/// symbol. `energy` (optional, same shape) ranks subcarriers when the
/// system is over-constrained.
struct IndexGrid {
  std::size_t n_symbols = 0;
  std::vector<int> subcarriers;
  std::vector<std::uint32_t> index;
  std::vector<double> energy;

  std::uint32_t at(std::size_t sym, std::size_t j) const { return index[sym * subcarriers.size() + j]; }
};

struct PayloadSolution {
  SolveReport report;
  std::vector<std::uint8_t> psdu;
};

/// Finds a PSDU whose data field puts the grid's points on its subcarriers.
/// Symbols are solved in order from the coding chain state left by the
/// previous ones. The PSDU is floor(n_symbols * n_dbps / 8) bytes.
PayloadSolution solve_payload(const IndexGrid& grid, const wifi::McsConfig& mcs,
                              std::uint8_t scrambler_seed = wifi::kDefaultScramblerSeed);

}  // namespace ctc::solver
