#ifndef STOCHENS_ERRORS_HPP
#define STOCHENS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace stochens {

/// Operand dimensions do not conform (matrix widths, architectures, lengths).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value lies outside the domain of an operation (non-finite input, bad label).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid configuration; raised before any compute starts.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed file contents.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure failed (diverging sampler, non-finite training loss).
class ComputeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace stochens

#endif  // STOCHENS_ERRORS_HPP
