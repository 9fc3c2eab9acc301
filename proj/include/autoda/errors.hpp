#ifndef AUTODA_ERRORS_HPP
#define AUTODA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace autoda {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Vector operands whose shapes do not agree.
struct ShapeMismatch : Error {
  using Error::Error;
};

// Argument outside its mathematical domain (e.g. p outside [0,1]).
struct DomainError : Error {
  using Error::Error;
};

// An oracle query was requested with no budget remaining. Callers treat this
// as the normal end of a walk, not as a failure.
struct BudgetExhausted : Error {
  using Error::Error;
};

// The supplied starting point is classified like the original input.
struct StartingPointNotAdversarial : Error {
  using Error::Error;
};

// A proposal produced NaN/Inf components. Soft error: the step is discarded.
struct NumericError : Error {
  using Error::Error;
};

struct MalformedFile : Error {
  using Error::Error;
};

struct LabelOutOfRange : Error {
  using Error::Error;
};

struct Unsupported : Error {
  using Error::Error;
};

// Bad command-line / config-file input. CLI maps this to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Victim model or dataset could not be loaded. CLI maps this to exit code 3.
struct LoadError : Error {
  using Error::Error;
};

// The program generator stayed unreachable after the retry policy. Exit 4.
struct GeneratorUnavailable : Error {
  using Error::Error;
};

// A completion arrived but carried no extractable program text.
struct EmptyCompletion : Error {
  using Error::Error;
};

// Every candidate of the final generation is Failed.
struct AllFailed : Error {
  using Error::Error;
};

// Program-text diagnostics carry a 1-based source position.
struct ParseError : Error {
  int line = 0;
  int col = 0;
  ParseError(int line_, int col_, const std::string& message)
      : Error("line " + std::to_string(line_) + ", col " + std::to_string(col_) + ": " + message),
        line(line_),
        col(col_) {}
};

struct SyntaxError : ParseError {
  using ParseError::ParseError;
};

struct TypeError : ParseError {
  using ParseError::ParseError;
};

struct UnboundIdentifier : ParseError {
  std::string name;
  UnboundIdentifier(int line_, int col_, const std::string& name_)
      : ParseError(line_, col_, "unbound identifier '" + name_ + "'"), name(name_) {}
};

}  // namespace autoda

#endif  // AUTODA_ERRORS_HPP
