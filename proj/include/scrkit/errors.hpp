#pragma once

/**
 * Error taxonomy shared by every module.
 *
 * Each error carries a category so the CLI can map failures onto its exit
 * codes without string matching: data problems exit 2, transport problems
 * exit 3. Violations found by validate_run are data, not exceptions.
 */

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scrkit {

enum class ErrorKind {
  Parse,
  Integrity,
  Reference,
  Shape,
  Precondition,
  DegenerateInput,
  Convergence,
  UnavailableSignal,
  Transport,
  Schema,
  Alignment,
  AmbiguousProbe,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

#define SCRKIT_DEFINE_ERROR(Name, Kind)                                        \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {}   \
  };

SCRKIT_DEFINE_ERROR(IntegrityError, Integrity)
SCRKIT_DEFINE_ERROR(ReferenceError, Reference)
SCRKIT_DEFINE_ERROR(ShapeError, Shape)
SCRKIT_DEFINE_ERROR(PreconditionError, Precondition)
SCRKIT_DEFINE_ERROR(DegenerateInputError, DegenerateInput)
SCRKIT_DEFINE_ERROR(ConvergenceError, Convergence)
SCRKIT_DEFINE_ERROR(UnavailableSignalError, UnavailableSignal)
SCRKIT_DEFINE_ERROR(TransportError, Transport)
SCRKIT_DEFINE_ERROR(SchemaError, Schema)
SCRKIT_DEFINE_ERROR(AlignmentError, Alignment)
SCRKIT_DEFINE_ERROR(AmbiguousProbeError, AmbiguousProbe)

#undef SCRKIT_DEFINE_ERROR

}  // namespace scrkit
