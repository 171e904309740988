#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctc {

using cd = std::complex<double>;
using CVec = std::vector<cd>;
using Bits = std::vector<std::uint8_t>;

// Error categories. The CLI maps ConfigError to exit code 2 and everything
// else derived from std::exception to exit code 3.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace ctc
