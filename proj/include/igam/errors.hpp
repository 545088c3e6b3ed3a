#pragma once

#include <stdexcept>
#include <string>

namespace igam {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define IGAM_DEFINE_ERROR(NAME)                                         \
  struct NAME : Error {                                                 \
    explicit NAME(const std::string& what) : Error(#NAME ": " + what) {} \
  }

IGAM_DEFINE_ERROR(ShapeMismatch);
IGAM_DEFINE_ERROR(NonFiniteValue);
IGAM_DEFINE_ERROR(NotScalar);
IGAM_DEFINE_ERROR(Unreachable);
IGAM_DEFINE_ERROR(GradDisabled);
IGAM_DEFINE_ERROR(UnknownPreset);
IGAM_DEFINE_ERROR(IncompatibleShape);
IGAM_DEFINE_ERROR(NoLogitLayer);
IGAM_DEFINE_ERROR(BothZero);
IGAM_DEFINE_ERROR(WrongKind);
IGAM_DEFINE_ERROR(Unresolved);
IGAM_DEFINE_ERROR(ZeroGradient);
IGAM_DEFINE_ERROR(UnknownGenerator);
IGAM_DEFINE_ERROR(BadMagic);
IGAM_DEFINE_ERROR(CountMismatch);
IGAM_DEFINE_ERROR(Truncated);
IGAM_DEFINE_ERROR(ConfigError);
IGAM_DEFINE_ERROR(IoError);

#undef IGAM_DEFINE_ERROR

}  // namespace igam
