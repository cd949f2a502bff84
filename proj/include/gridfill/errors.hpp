#pragma once

#include <stdexcept>
#include <string>

namespace gridfill {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or out-of-domain input (non-finite entries, shape mismatch,
/// out-of-range parameters, unreadable files).
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// Requested rank outside the admissible range for the given shape.
class InvalidRankError : public Error {
 public:
  using Error::Error;
};

/// A basis argument failed its orthonormality check.
class InvalidBasisError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given input (e.g. rank-0 matrix, or an
/// empty evaluation set).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Scree analysis of an identically-zero matrix.
class UndefinedScreeError : public Error {
 public:
  using Error::Error;
};

/// The restricted linear operator in the certificate construction is
/// numerically singular.
class NotInvertibleError : public Error {
 public:
  using Error::Error;
};

/// Two observations of the same entry disagree beyond tolerance.
class InconsistentObservationError : public Error {
 public:
  using Error::Error;
};

/// The affine constraint system admits no solution.
class InfeasibleSystemError : public Error {
 public:
  using Error::Error;
};

/// A factorization that should succeed on consistent input failed, or an
/// internal numeric identity was violated beyond tolerance.
class NumericalDegeneracyError : public Error {
 public:
  using Error::Error;
};

/// Network topology outside the supported class (loops, self-edges).
class UnsupportedTopologyError : public Error {
 public:
  using Error::Error;
};

/// Power flow failed to converge (e.g. load beyond deliverability).
class NoSolutionError : public Error {
 public:
  using Error::Error;
};

/// A state matrix was requested from an unconverged power-flow solution.
class StaleSolutionError : public Error {
 public:
  using Error::Error;
};

/// Unparseable input file or config.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridfill
