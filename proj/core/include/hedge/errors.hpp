#pragma once
#include <stdexcept>
#include <string>

namespace hedge {

// Every failure mode callers are expected to distinguish gets its own type.
// All inherit Error so "catch everything from this library" stays one clause.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define HEDGE_DEFINE_ERROR(Name)                                  \
  struct Name : Error {                                           \
    explicit Name(const std::string& msg) : Error(#Name ": " + msg) {} \
  }

// IDX parsing
HEDGE_DEFINE_ERROR(BadMagic);
HEDGE_DEFINE_ERROR(Truncated);
HEDGE_DEFINE_ERROR(DimMismatch);
HEDGE_DEFINE_ERROR(LabelOutOfRange);

// dataset synthesis / file format
HEDGE_DEFINE_ERROR(UnsupportedN);
HEDGE_DEFINE_ERROR(InsufficientDigits);
HEDGE_DEFINE_ERROR(IoFailure);
HEDGE_DEFINE_ERROR(FormatVersionMismatch);
HEDGE_DEFINE_ERROR(ChecksumMismatch);

// computation graph
HEDGE_DEFINE_ERROR(ShapeMismatch);
HEDGE_DEFINE_ERROR(NonFiniteValue);
HEDGE_DEFINE_ERROR(NotScalarOutput);
HEDGE_DEFINE_ERROR(ForwardNotRun);

// distributions / losses
HEDGE_DEFINE_ERROR(StratificationError);
HEDGE_DEFINE_ERROR(NonPositiveSigma);

// training
HEDGE_DEFINE_ERROR(DivergenceDetected);

// evaluation
HEDGE_DEFINE_ERROR(NoPositives);
HEDGE_DEFINE_ERROR(GalleryTooSmall);
HEDGE_DEFINE_ERROR(DegenerateInput);
HEDGE_DEFINE_ERROR(WrongDimensionality);
HEDGE_DEFINE_ERROR(UnsupportedDim);

// configuration / CLI
HEDGE_DEFINE_ERROR(ConfigError);

#undef HEDGE_DEFINE_ERROR

}  // namespace hedge
