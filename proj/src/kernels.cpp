#include "visent/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "visent/error.hpp"

namespace visent::kernels {

namespace {

void check_finite(std::span<const double> v, const char* what) {
    for (const double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(what) + ": non-finite result");
        }
    }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ConfigError("matmul: inner dimensions differ (" + std::to_string(a.cols) +
                          " vs " + std::to_string(b.rows) + ")");
    }
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    check_finite(out.data, "matmul");
    return out;
}

std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols != x.size()) {
        throw ConfigError("matvec: dimensions differ (" + std::to_string(a.cols) +
                          " vs " + std::to_string(x.size()) + ")");
    }
    std::vector<double> out(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double acc = 0.0;
        const std::span<const double> row = a.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            acc += row[k] * x[k];
        }
        out[i] = acc;
    }
    check_finite(out, "matvec");
    return out;
}

void softmax_inplace(std::span<double> x) {
    if (x.empty()) return;
    const double m = *std::max_element(x.begin(), x.end());
    double sum = 0.0;
    for (double& v : x) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : x) {
        v /= sum;
    }
    check_finite(x, "softmax");
}

void layer_norm(std::span<double> x, std::span<const double> gain,
                std::span<const double> bias, double eps) {
    if (gain.size() != x.size() || bias.size() != x.size()) {
        throw ConfigError("layer_norm: gain/bias size differs from input");
    }
    double mean = 0.0;
    for (const double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (const double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = (x[i] - mean) * inv * gain[i] + bias[i];
    }
    check_finite(x, "layer_norm");
}

double gelu(double x) {
    // tanh approximation
    const double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

}  // namespace visent::kernels
