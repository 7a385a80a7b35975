#pragma once

#include <cstddef>
#include <vector>

namespace visent {

// Next-token probability vector over the vocabulary. Entries lie in [0, 1]
// and the total mass is 1 within 1e-9.
struct VocabDistribution {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }

    // Throws NumericError when the invariants are broken.
    void validate() const;

    // Index of the largest entry; the lowest index wins ties.
    std::size_t argmax() const;
};

}  // namespace visent
