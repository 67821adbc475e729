#pragma once

#include <stdexcept>
#include <string>

namespace cubethin {

/// Base class for all errors thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A matrix that must have full column rank does not (redundant columns).
struct RankDeficient : Error {
  using Error::Error;
};

/// An operation needing score vectors was given a chain without them.
struct MissingScores : Error {
  using Error::Error;
};

/// Shapes of the supplied arrays are inconsistent.
struct DimensionMismatch : Error {
  using Error::Error;
};

/// Linear program has an empty feasible region.
struct Infeasible : Error {
  using Error::Error;
};

/// Linear program objective is unbounded below.
struct Unbounded : Error {
  using Error::Error;
};

/// No admissible direction remains; the flight phase has terminated.
struct NoDirection : Error {
  using Error::Error;
};

/// Too many non-integer coordinates remain for the landing program.
struct TooManyResidual : Error {
  using Error::Error;
};

/// All weights are zero; no sampling problem can be formed.
struct DegenerateWeights : Error {
  using Error::Error;
};

/// An index or count argument is outside its valid range.
struct InvalidRange : Error {
  using Error::Error;
};

/// A file could not be parsed; the message names the offending line.
struct ParseError : Error {
  using Error::Error;
};

/// A file row has the wrong number of fields.
struct DimensionError : Error {
  using Error::Error;
};

/// A signed measure has (numerically) zero total mass.
struct ZeroMass : Error {
  using Error::Error;
};

/// A sample is degenerate for the requested statistic (e.g. all points equal).
struct DegenerateSample : Error {
  using Error::Error;
};

}  // namespace cubethin
