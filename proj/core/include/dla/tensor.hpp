#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace dla {

// Minimal dense double tensor. The network keeps all training math in
// double precision; shapes are small enough that simplicity beats a full
// expression library.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        v.assign(n, 0.0);
    }

    std::size_t size() const { return v.size(); }
    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
    void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

// Row-major C = alpha * op(A) @ op(B) + beta * C, op selected by the trans
// flags. Single-threaded on purpose: callers parallelize across independent
// problems, and a fixed accumulation order keeps results reproducible.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);

// float variant used by the inference engine, same contract and blocking
void gemm_f32(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
              const float* a, int lda, const float* b, int ldb, float beta,
              float* c, int ldc);

}  // namespace dla
