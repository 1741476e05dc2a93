#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qrife {

// Root of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside its mathematical domain (quantile level, CI level, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Mismatched dimensions between inputs of one operation.
class ContractError : public Error {
 public:
  using Error::Error;
};

class SingularDesignError : public Error {
 public:
  SingularDesignError(const std::string& what, std::vector<int> columns)
      : Error(what), columns_(std::move(columns)) {}
  const std::vector<int>& columns() const noexcept { return columns_; }

 private:
  std::vector<int> columns_;
};

class SolverFailure : public Error {
 public:
  SolverFailure(const std::string& what, int iterations)
      : Error(what), iterations_(iterations) {}
  int iterations() const noexcept { return iterations_; }

 private:
  int iterations_;
};

// First-step failure in one (group, period, quantile) cell.
class CellError : public Error {
 public:
  CellError(const std::string& what, int group, int period, double quantile)
      : Error(what), group_(group), period_(period), quantile_(quantile) {}
  int group() const noexcept { return group_; }
  int period() const noexcept { return period_; }
  double quantile() const noexcept { return quantile_; }

 private:
  int group_;
  int period_;
  double quantile_;
};

// Normal equations of the second step are singular.
class IdentificationError : public Error {
 public:
  using Error::Error;
};

// Loading Gram matrix not invertible, or no treated/control variation left
// after projecting out the loadings.
class DegenerateLoadingsError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DesignError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace qrife
