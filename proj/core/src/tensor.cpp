#include "dla/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#ifdef __AVX512F__
#include <immintrin.h>
#endif

#include "dla/error.hpp"

namespace dla {

namespace {

// BLIS-style blocking. MR x NR is the register tile; the packed panels keep
// the microkernel streaming from contiguous memory. The float tile is twice
// as wide so both element types fill the same vector register budget.
template <class T>
struct Tile;

template <>
struct Tile<double> {
    static constexpr int MR = 4, NR = 16, KC = 256, MC = 96, NC = 1024;
};

template <>
struct Tile<float> {
    static constexpr int MR = 4, NR = 32, KC = 256, MC = 96, NC = 1024;
};

template <class T>
inline T elem_a(const T* a, int lda, bool trans, int i, int k) {
    return trans ? a[std::size_t(k) * lda + i] : a[std::size_t(i) * lda + k];
}

template <class T>
inline T elem_b(const T* b, int ldb, bool trans, int k, int j) {
    return trans ? b[std::size_t(j) * ldb + k] : b[std::size_t(k) * ldb + j];
}

// panels of MR rows, k-major within a panel, zero-padded to MR
template <class T>
void pack_a(const T* a, int lda, bool trans, int i0, int mc, int p0, int kc, T* out) {
    constexpr int MR = Tile<T>::MR;
    for (int ip = 0; ip < mc; ip += MR) {
        int rows = std::min(MR, mc - ip);
        for (int k = 0; k < kc; ++k) {
            for (int r = 0; r < rows; ++r)
                out[k * MR + r] = elem_a(a, lda, trans, i0 + ip + r, p0 + k);
            for (int r = rows; r < MR; ++r) out[k * MR + r] = T(0);
        }
        out += std::size_t(kc) * MR;
    }
}

// panels of NR columns, k-major within a panel, zero-padded to NR
template <class T>
void pack_b(const T* b, int ldb, bool trans, int p0, int kc, int j0, int nc, T* out) {
    constexpr int NR = Tile<T>::NR;
    for (int jp = 0; jp < nc; jp += NR) {
        int cols = std::min(NR, nc - jp);
        if (!trans && cols == NR) {
            for (int k = 0; k < kc; ++k)
                std::memcpy(out + std::size_t(k) * NR, b + std::size_t(p0 + k) * ldb + j0 + jp,
                            NR * sizeof(T));
        } else {
            for (int k = 0; k < kc; ++k) {
                for (int c = 0; c < cols; ++c)
                    out[k * NR + c] = elem_b(b, ldb, trans, p0 + k, j0 + jp + c);
                for (int c = cols; c < NR; ++c) out[k * NR + c] = T(0);
            }
        }
        out += std::size_t(kc) * NR;
    }
}

template <class T>
void microkernel(int kc, const T* ap, const T* bp, T* acc) {
    constexpr int MR = Tile<T>::MR;
    constexpr int NR = Tile<T>::NR;
    T c[MR * NR] = {};
    for (int k = 0; k < kc; ++k) {
        const T* bk = bp + std::size_t(k) * NR;
        for (int r = 0; r < MR; ++r) {
            T av = ap[k * MR + r];
            T* cr = c + r * NR;
            for (int j = 0; j < NR; ++j) cr[j] += av * bk[j];
        }
    }
    std::memcpy(acc, c, sizeof c);
}

#ifdef __AVX512F__

template <>
void microkernel<double>(int kc, const double* ap, const double* bp, double* acc) {
    constexpr int MR = Tile<double>::MR;
    constexpr int NR = Tile<double>::NR;
    __m512d c00 = _mm512_setzero_pd(), c01 = _mm512_setzero_pd();
    __m512d c10 = _mm512_setzero_pd(), c11 = _mm512_setzero_pd();
    __m512d c20 = _mm512_setzero_pd(), c21 = _mm512_setzero_pd();
    __m512d c30 = _mm512_setzero_pd(), c31 = _mm512_setzero_pd();
    for (int k = 0; k < kc; ++k) {
        __m512d b0 = _mm512_loadu_pd(bp + std::size_t(k) * NR);
        __m512d b1 = _mm512_loadu_pd(bp + std::size_t(k) * NR + 8);
        __m512d a0 = _mm512_set1_pd(ap[k * MR + 0]);
        __m512d a1 = _mm512_set1_pd(ap[k * MR + 1]);
        __m512d a2 = _mm512_set1_pd(ap[k * MR + 2]);
        __m512d a3 = _mm512_set1_pd(ap[k * MR + 3]);
        c00 = _mm512_fmadd_pd(a0, b0, c00);
        c01 = _mm512_fmadd_pd(a0, b1, c01);
        c10 = _mm512_fmadd_pd(a1, b0, c10);
        c11 = _mm512_fmadd_pd(a1, b1, c11);
        c20 = _mm512_fmadd_pd(a2, b0, c20);
        c21 = _mm512_fmadd_pd(a2, b1, c21);
        c30 = _mm512_fmadd_pd(a3, b0, c30);
        c31 = _mm512_fmadd_pd(a3, b1, c31);
    }
    _mm512_storeu_pd(acc + 0, c00);
    _mm512_storeu_pd(acc + 8, c01);
    _mm512_storeu_pd(acc + 16, c10);
    _mm512_storeu_pd(acc + 24, c11);
    _mm512_storeu_pd(acc + 32, c20);
    _mm512_storeu_pd(acc + 40, c21);
    _mm512_storeu_pd(acc + 48, c30);
    _mm512_storeu_pd(acc + 56, c31);
}

template <>
void microkernel<float>(int kc, const float* ap, const float* bp, float* acc) {
    constexpr int MR = Tile<float>::MR;
    constexpr int NR = Tile<float>::NR;
    __m512 c00 = _mm512_setzero_ps(), c01 = _mm512_setzero_ps();
    __m512 c10 = _mm512_setzero_ps(), c11 = _mm512_setzero_ps();
    __m512 c20 = _mm512_setzero_ps(), c21 = _mm512_setzero_ps();
    __m512 c30 = _mm512_setzero_ps(), c31 = _mm512_setzero_ps();
    for (int k = 0; k < kc; ++k) {
        __m512 b0 = _mm512_loadu_ps(bp + std::size_t(k) * NR);
        __m512 b1 = _mm512_loadu_ps(bp + std::size_t(k) * NR + 16);
        __m512 a0 = _mm512_set1_ps(ap[k * MR + 0]);
        __m512 a1 = _mm512_set1_ps(ap[k * MR + 1]);
        __m512 a2 = _mm512_set1_ps(ap[k * MR + 2]);
        __m512 a3 = _mm512_set1_ps(ap[k * MR + 3]);
        c00 = _mm512_fmadd_ps(a0, b0, c00);
        c01 = _mm512_fmadd_ps(a0, b1, c01);
        c10 = _mm512_fmadd_ps(a1, b0, c10);
        c11 = _mm512_fmadd_ps(a1, b1, c11);
        c20 = _mm512_fmadd_ps(a2, b0, c20);
        c21 = _mm512_fmadd_ps(a2, b1, c21);
        c30 = _mm512_fmadd_ps(a3, b0, c30);
        c31 = _mm512_fmadd_ps(a3, b1, c31);
    }
    _mm512_storeu_ps(acc + 0, c00);
    _mm512_storeu_ps(acc + 16, c01);
    _mm512_storeu_ps(acc + 32, c10);
    _mm512_storeu_ps(acc + 48, c11);
    _mm512_storeu_ps(acc + 64, c20);
    _mm512_storeu_ps(acc + 80, c21);
    _mm512_storeu_ps(acc + 96, c30);
    _mm512_storeu_ps(acc + 112, c31);
}

#endif

template <class T>
void gemm_impl(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
               const T* b, int ldb, T beta, T* c, int ldc) {
    constexpr int MR = Tile<T>::MR;
    constexpr int NR = Tile<T>::NR;
    constexpr int KC = Tile<T>::KC;
    constexpr int MC = Tile<T>::MC;
    constexpr int NC = Tile<T>::NC;

    if (m < 0 || n < 0 || k < 0) throw ShapeError("gemm: negative dimension");
    if (m == 0 || n == 0) return;
    if (k == 0 || alpha == T(0)) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                T* p = c + std::size_t(i) * ldc + j;
                *p = (beta == T(0)) ? T(0) : beta * *p;
            }
        return;
    }

    thread_local std::vector<T> apack, bpack;
    apack.resize(std::size_t(MC) * KC);
    bpack.resize(std::size_t(KC) * NC);

    for (int jc = 0; jc < n; jc += NC) {
        int nc = std::min(NC, n - jc);
        for (int pc = 0; pc < k; pc += KC) {
            int kc = std::min(KC, k - pc);
            bool first = (pc == 0);
            pack_b(b, ldb, trans_b, pc, kc, jc, nc, bpack.data());
            for (int ic = 0; ic < m; ic += MC) {
                int mc = std::min(MC, m - ic);
                pack_a(a, lda, trans_a, ic, mc, pc, kc, apack.data());
                for (int jr = 0; jr < nc; jr += NR) {
                    const T* bp = bpack.data() + std::size_t(jr / NR) * kc * NR;
                    for (int ir = 0; ir < mc; ir += MR) {
                        const T* ap = apack.data() + std::size_t(ir / MR) * kc * MR;
                        T acc[MR * NR];
                        microkernel<T>(kc, ap, bp, acc);
                        int rows = std::min(MR, mc - ir);
                        int cols = std::min(NR, nc - jr);
                        for (int r = 0; r < rows; ++r) {
                            T* crow = c + std::size_t(ic + ir + r) * ldc + jc + jr;
                            const T* arow = acc + r * NR;
                            if (first) {
                                if (beta == T(0))
                                    for (int j = 0; j < cols; ++j) crow[j] = alpha * arow[j];
                                else
                                    for (int j = 0; j < cols; ++j)
                                        crow[j] = beta * crow[j] + alpha * arow[j];
                            } else {
                                for (int j = 0; j < cols; ++j) crow[j] += alpha * arow[j];
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
          int lda, const double* b, int ldb, double beta, double* c, int ldc) {
    gemm_impl(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm_f32(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
              int lda, const float* b, int ldb, float beta, float* c, int ldc) {
    gemm_impl(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace dla
