#ifndef ELSD_ERRORS_HPP
#define ELSD_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace elsd {

/// Malformed or non-finite input data, or mismatched sizes.
class InvalidInput : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A scalar parameter outside its admissible range.
class InvalidParameter : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Frame geometry incompatible with the requested construction.
class InvalidGeometry : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Input for which the solver initialization is undefined (e.g. all-zero D).
class DegenerateInput : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Synthetic scenario that cannot be realized.
class InvalidScenario : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Filesystem / format failure while reading or writing data.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// An inner iterative solver hit its iteration cap before certifying optimality.
class SolverStalled : public std::runtime_error {
public:
  SolverStalled(const std::string& what, double last_gap)
      : std::runtime_error(what), last_gap_(last_gap) {}

  double last_gap() const noexcept { return last_gap_; }

private:
  double last_gap_;
};

} // namespace elsd

#endif // ELSD_ERRORS_HPP
