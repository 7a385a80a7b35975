#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace visent {

// Dense row-major matrix of doubles. Everything here runs at toy-model scale,
// so the kernels are plain loops with no blocking or SIMD.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

namespace kernels {

// a (r x k) times b (k x c). Throws ConfigError on shape mismatch and
// NumericError if the result is not finite.
Matrix matmul(const Matrix& a, const Matrix& b);

// a (r x k) times x (k). Same error contract as matmul.
std::vector<double> matvec(const Matrix& a, std::span<const double> x);

// In-place softmax; subtracts the max before exponentiation.
void softmax_inplace(std::span<double> x);

// LayerNorm with learned gain and bias.
void layer_norm(std::span<double> x, std::span<const double> gain,
                std::span<const double> bias, double eps = 1e-5);

double gelu(double x);

}  // namespace kernels
}  // namespace visent
