#include "visent/distribution.hpp"

#include <cmath>
#include <string>

#include "visent/error.hpp"

namespace visent {

void VocabDistribution::validate() const {
    if (values.empty()) {
        throw NumericError("distribution: empty");
    }
    double sum = 0.0;
    for (const double p : values) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw NumericError("distribution: entry outside [0, 1]");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw NumericError("distribution: mass sums to " + std::to_string(sum) +
                           ", expected 1 within 1e-9");
    }
}

std::size_t VocabDistribution::argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

}  // namespace visent
