#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ratekit {

/// Parameter or argument outside the domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed panel input. Row numbers are 1-based and count the header as row 1.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t row, std::string column, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + ", column '" + column + "': " + what),
        row_(row),
        column_(std::move(column)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

/// The model cannot be estimated on this data (rank deficiency, empty panel).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure failed (non-finite values, series that does not converge).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ratekit
