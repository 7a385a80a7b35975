#pragma once

#include <stdexcept>
#include <string>

namespace visent {

// Bad dimensions, bad parameter values, unusable input files.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values, probability-mass underflow, broken invariants.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Token id outside the vocabulary.
struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// A scripted backend was asked for a step it has no distribution for.
// The decode loop treats this as end-of-sequence.
struct ScriptExhausted : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corpus or metric input problems: empty corpus, degenerate data,
// duplicated markers, id mismatches.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A model backend failed mid-decode; message carries the step index.
struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace visent
