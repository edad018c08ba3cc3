#pragma once

#include <stdexcept>

namespace clce {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// loss-core
struct DegenerateVector : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct EmptyNegativeSet : Error { using Error::Error; };
struct NoPositivePairs : Error { using Error::Error; };
struct BatchTooSmall : Error { using Error::Error; };
struct InvalidBatch : Error { using Error::Error; };
struct InvalidStepSize : Error { using Error::Error; };

// model
struct ShapeError : Error { using Error::Error; };
struct DivergenceError : Error { using Error::Error; };
struct CorruptCheckpoint : Error { using Error::Error; };

// data
struct ParseError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };

// fewshot / diagnostics
struct InsufficientData : Error { using Error::Error; };
struct SymmetryError : Error { using Error::Error; };
struct DegenerateEmbedding : Error { using Error::Error; };

}  // namespace clce
