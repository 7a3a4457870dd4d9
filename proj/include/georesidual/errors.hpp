#pragma once

#include <stdexcept>
#include <string>

namespace georesidual {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GEORESIDUAL_DEFINE_ERROR(Name)          \
  class Name : public Error {                   \
   public:                                      \
    explicit Name(const std::string& what)      \
        : Error(#Name ": " + what) {}           \
  }

GEORESIDUAL_DEFINE_ERROR(SingularMatrix);
GEORESIDUAL_DEFINE_ERROR(InvalidInput);
GEORESIDUAL_DEFINE_ERROR(ShapeMismatch);
GEORESIDUAL_DEFINE_ERROR(ZeroDirection);
GEORESIDUAL_DEFINE_ERROR(DomainError);
GEORESIDUAL_DEFINE_ERROR(IndexError);
GEORESIDUAL_DEFINE_ERROR(EmptySequence);
GEORESIDUAL_DEFINE_ERROR(InvalidConfig);
GEORESIDUAL_DEFINE_ERROR(NonFiniteGradient);
GEORESIDUAL_DEFINE_ERROR(IoError);
GEORESIDUAL_DEFINE_ERROR(FormatError);
GEORESIDUAL_DEFINE_ERROR(TruncatedFile);

#undef GEORESIDUAL_DEFINE_ERROR

}  // namespace georesidual
