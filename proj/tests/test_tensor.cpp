#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"

#include "dla/rng.hpp"
#include "dla/tensor.hpp"

using namespace dla;

namespace {

// textbook triple loop, the reference for the blocked kernel
template <class T>
void naive_gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
                int ldb, T beta, T* c, int ldc) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T acc = 0;
            for (int p = 0; p < k; ++p) {
                T av = ta ? a[std::size_t(p) * lda + i] : a[std::size_t(i) * lda + p];
                T bv = tb ? b[std::size_t(j) * ldb + p] : b[std::size_t(p) * ldb + j];
                acc += av * bv;
            }
            c[std::size_t(i) * ldc + j] = alpha * acc + beta * c[std::size_t(i) * ldc + j];
        }
}

template <class T>
std::vector<T> random_vec(std::size_t n, Rng& rng) {
    std::vector<T> v(n);
    for (auto& x : v) x = T(rng.uniform(-1.0, 1.0));
    return v;
}

template <class T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

}  // namespace

TEST_CASE("gemm matches the naive oracle across shapes and transposes") {
    Rng rng(42);
    const int shapes[][3] = {{1, 1, 1},   {2, 3, 4},    {5, 16, 7},  {17, 33, 9},
                             {4, 32, 256}, {96, 97, 41}, {129, 65, 300}};
    for (auto& s : shapes) {
        int m = s[0], n = s[1], k = s[2];
        for (int ta = 0; ta < 2; ++ta)
            for (int tb = 0; tb < 2; ++tb) {
                auto a = random_vec<double>(std::size_t(m) * k, rng);
                auto b = random_vec<double>(std::size_t(k) * n, rng);
                auto c0 = random_vec<double>(std::size_t(m) * n, rng);
                int lda = ta ? m : k, ldb = tb ? k : n;
                auto c1 = c0, c2 = c0;
                gemm(ta, tb, m, n, k, 1.0, a.data(), lda, b.data(), ldb, 0.5, c1.data(), n);
                naive_gemm<double>(ta, tb, m, n, k, 1.0, a.data(), lda, b.data(), ldb, 0.5,
                                   c2.data(), n);
                double tol = 1e-12 * k;
                CAPTURE(m);
                CAPTURE(n);
                CAPTURE(k);
                CAPTURE(ta);
                CAPTURE(tb);
                CHECK(max_abs_diff(c1, c2) <= tol);
            }
    }
}

TEST_CASE("gemm_f32 matches the naive oracle") {
    Rng rng(43);
    const int shapes[][3] = {{3, 5, 2}, {16, 64, 25}, {31, 130, 77}, {64, 96, 41}};
    for (auto& s : shapes) {
        int m = s[0], n = s[1], k = s[2];
        auto a = random_vec<float>(std::size_t(m) * k, rng);
        auto b = random_vec<float>(std::size_t(k) * n, rng);
        auto c0 = random_vec<float>(std::size_t(m) * n, rng);
        auto c1 = c0, c2 = c0;
        gemm_f32(false, false, m, n, k, 2.0f, a.data(), k, b.data(), n, -1.0f, c1.data(), n);
        naive_gemm<float>(false, false, m, n, k, 2.0f, a.data(), k, b.data(), n, -1.0f, c2.data(),
                          n);
        CHECK(max_abs_diff(c1, c2) <= 2e-5 * k);
    }
}

TEST_CASE("gemm edge cases") {
    SUBCASE("k = 0 scales C by beta") {
        std::vector<double> c{1.0, 2.0, 3.0, 4.0};
        gemm(false, false, 2, 2, 0, 1.0, nullptr, 1, nullptr, 2, 0.25, c.data(), 2);
        CHECK(c == std::vector<double>{0.25, 0.5, 0.75, 1.0});
    }
    SUBCASE("alpha = 0 ignores A and B") {
        std::vector<double> a{1e300, 1e300}, b{1e300, 1e300}, c{1.0, 1.0, 1.0, 1.0};
        gemm(false, false, 2, 2, 1, 0.0, a.data(), 1, b.data(), 2, 2.0, c.data(), 2);
        CHECK(c == std::vector<double>{2.0, 2.0, 2.0, 2.0});
    }
    SUBCASE("beta = 0 overwrites stale NaN in C") {
        std::vector<double> a{1.0}, b{3.0};
        std::vector<double> c{std::nan("")};
        gemm(false, false, 1, 1, 1, 1.0, a.data(), 1, b.data(), 1, 0.0, c.data(), 1);
        CHECK(c[0] == 3.0);
    }
    SUBCASE("strided C (ldc > n)") {
        Rng rng(7);
        int m = 4, n = 5, k = 6, ldc = 9;
        auto a = random_vec<double>(std::size_t(m) * k, rng);
        auto b = random_vec<double>(std::size_t(k) * n, rng);
        std::vector<double> c1(std::size_t(m) * ldc, 1.5), c2 = c1;
        gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 1.0, c1.data(), ldc);
        naive_gemm<double>(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 1.0, c2.data(),
                           ldc);
        CHECK(max_abs_diff(c1, c2) <= 1e-12 * k);
    }
}

TEST_CASE("gemm is bitwise deterministic across repeats") {
    Rng rng(11);
    int m = 37, n = 53, k = 129;
    auto a = random_vec<double>(std::size_t(m) * k, rng);
    auto b = random_vec<double>(std::size_t(k) * n, rng);
    std::vector<double> c1(std::size_t(m) * n, 0.0), c2 = c1;
    gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, c1.data(), n);
    gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, c2.data(), n);
    CHECK(c1 == c2);
}
