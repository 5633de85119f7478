#include "agpw/kernels.hpp"

#ifdef AGPW_HAVE_X86_KERNELS

#include <immintrin.h>

#include <cmath>
#include <cstddef>

// AVX2+FMA variants of the scalar kernels. Register-blocked microkernels:
// gemm_nn / gemm_tn broadcast one A element against a row tile of B, gemm_nt
// accumulates dot products along contiguous rows.

namespace agpw::kernels {

namespace {

inline __m256i tail_mask(int rem) {
  return _mm256_set_epi64x(rem > 3 ? -1 : 0, rem > 2 ? -1 : 0,
                           rem > 1 ? -1 : 0, rem > 0 ? -1 : 0);
}

// ----------------------------------------------------------------- gemm_nn

template <int MR>
void nn_rows(const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, int k, int n, bool accumulate) {
  int j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d acc0[MR], acc1[MR];
    for (int r = 0; r < MR; ++r) {
      if (accumulate) {
        acc0[r] = _mm256_loadu_pd(c + r * (std::ptrdiff_t)ldc + j);
        acc1[r] = _mm256_loadu_pd(c + r * (std::ptrdiff_t)ldc + j + 4);
      } else {
        acc0[r] = _mm256_setzero_pd();
        acc1[r] = _mm256_setzero_pd();
      }
    }
    for (int kk = 0; kk < k; ++kk) {
      const __m256d b0 = _mm256_loadu_pd(b + kk * (std::ptrdiff_t)ldb + j);
      const __m256d b1 = _mm256_loadu_pd(b + kk * (std::ptrdiff_t)ldb + j + 4);
      for (int r = 0; r < MR; ++r) {
        const __m256d av = _mm256_set1_pd(a[r * (std::ptrdiff_t)lda + kk]);
        acc0[r] = _mm256_fmadd_pd(av, b0, acc0[r]);
        acc1[r] = _mm256_fmadd_pd(av, b1, acc1[r]);
      }
    }
    for (int r = 0; r < MR; ++r) {
      _mm256_storeu_pd(c + r * (std::ptrdiff_t)ldc + j, acc0[r]);
      _mm256_storeu_pd(c + r * (std::ptrdiff_t)ldc + j + 4, acc1[r]);
    }
  }
  for (; j < n; j += 4) {
    const int rem = n - j;
    if (rem >= 4) {
      __m256d acc[MR];
      for (int r = 0; r < MR; ++r)
        acc[r] = accumulate ? _mm256_loadu_pd(c + r * (std::ptrdiff_t)ldc + j)
                            : _mm256_setzero_pd();
      for (int kk = 0; kk < k; ++kk) {
        const __m256d bv = _mm256_loadu_pd(b + kk * (std::ptrdiff_t)ldb + j);
        for (int r = 0; r < MR; ++r)
          acc[r] = _mm256_fmadd_pd(
              _mm256_set1_pd(a[r * (std::ptrdiff_t)lda + kk]), bv, acc[r]);
      }
      for (int r = 0; r < MR; ++r)
        _mm256_storeu_pd(c + r * (std::ptrdiff_t)ldc + j, acc[r]);
    } else {
      const __m256i msk = tail_mask(rem);
      __m256d acc[MR];
      for (int r = 0; r < MR; ++r)
        acc[r] = accumulate
                     ? _mm256_maskload_pd(c + r * (std::ptrdiff_t)ldc + j, msk)
                     : _mm256_setzero_pd();
      for (int kk = 0; kk < k; ++kk) {
        const __m256d bv =
            _mm256_maskload_pd(b + kk * (std::ptrdiff_t)ldb + j, msk);
        for (int r = 0; r < MR; ++r)
          acc[r] = _mm256_fmadd_pd(
              _mm256_set1_pd(a[r * (std::ptrdiff_t)lda + kk]), bv, acc[r]);
      }
      for (int r = 0; r < MR; ++r)
        _mm256_maskstore_pd(c + r * (std::ptrdiff_t)ldc + j, msk, acc[r]);
    }
  }
}

void v_gemm_nn(const double* a, int lda, const double* b, int ldb, double* c,
               int ldc, int m, int k, int n, bool accumulate) {
  int i = 0;
  for (; i + 4 <= m; i += 4)
    nn_rows<4>(a + i * (std::ptrdiff_t)lda, lda, b, ldb,
               c + i * (std::ptrdiff_t)ldc, ldc, k, n, accumulate);
  switch (m - i) {
    case 3:
      nn_rows<3>(a + i * (std::ptrdiff_t)lda, lda, b, ldb,
                 c + i * (std::ptrdiff_t)ldc, ldc, k, n, accumulate);
      break;
    case 2:
      nn_rows<2>(a + i * (std::ptrdiff_t)lda, lda, b, ldb,
                 c + i * (std::ptrdiff_t)ldc, ldc, k, n, accumulate);
      break;
    case 1:
      nn_rows<1>(a + i * (std::ptrdiff_t)lda, lda, b, ldb,
                 c + i * (std::ptrdiff_t)ldc, ldc, k, n, accumulate);
      break;
    default: break;
  }
}

// ----------------------------------------------------------------- gemm_nt

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  lo = _mm_hadd_pd(lo, lo);
  return _mm_cvtsd_f64(lo);
}

template <int MR, int NR>
void nt_tile(const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, int k, bool accumulate) {
  __m256d acc[MR][NR];
  for (int r = 0; r < MR; ++r)
    for (int s = 0; s < NR; ++s) acc[r][s] = _mm256_setzero_pd();
  int kk = 0;
  for (; kk + 4 <= k; kk += 4) {
    __m256d av[MR], bv[NR];
    for (int r = 0; r < MR; ++r)
      av[r] = _mm256_loadu_pd(a + r * (std::ptrdiff_t)lda + kk);
    for (int s = 0; s < NR; ++s)
      bv[s] = _mm256_loadu_pd(b + s * (std::ptrdiff_t)ldb + kk);
    for (int r = 0; r < MR; ++r)
      for (int s = 0; s < NR; ++s)
        acc[r][s] = _mm256_fmadd_pd(av[r], bv[s], acc[r][s]);
  }
  if (kk < k) {
    const __m256i msk = tail_mask(k - kk);
    __m256d av[MR], bv[NR];
    for (int r = 0; r < MR; ++r)
      av[r] = _mm256_maskload_pd(a + r * (std::ptrdiff_t)lda + kk, msk);
    for (int s = 0; s < NR; ++s)
      bv[s] = _mm256_maskload_pd(b + s * (std::ptrdiff_t)ldb + kk, msk);
    for (int r = 0; r < MR; ++r)
      for (int s = 0; s < NR; ++s)
        acc[r][s] = _mm256_fmadd_pd(av[r], bv[s], acc[r][s]);
  }
  for (int r = 0; r < MR; ++r)
    for (int s = 0; s < NR; ++s) {
      double* dst = c + r * (std::ptrdiff_t)ldc + s;
      const double v = hsum(acc[r][s]);
      *dst = accumulate ? *dst + v : v;
    }
}

template <int MR>
void nt_rows(const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, int k, int n, bool accumulate) {
  int j = 0;
  for (; j + 2 <= n; j += 2)
    nt_tile<MR, 2>(a, lda, b + j * (std::ptrdiff_t)ldb, ldb, c + j, ldc, k,
                   accumulate);
  if (j < n)
    nt_tile<MR, 1>(a, lda, b + j * (std::ptrdiff_t)ldb, ldb, c + j, ldc, k,
                   accumulate);
}

void v_gemm_nt(const double* a, int lda, const double* b, int ldb, double* c,
               int ldc, int m, int k, int n, bool accumulate) {
  int i = 0;
  for (; i + 4 <= m; i += 4)
    nt_rows<4>(a + i * (std::ptrdiff_t)lda, lda, b, ldb,
               c + i * (std::ptrdiff_t)ldc, ldc, k, n, accumulate);
  switch (m - i) {
    case 3:
      nt_rows<3>(a + i * (std::ptrdiff_t)lda, lda, b, ldb,
                 c + i * (std::ptrdiff_t)ldc, ldc, k, n, accumulate);
      break;
    case 2:
      nt_rows<2>(a + i * (std::ptrdiff_t)lda, lda, b, ldb,
                 c + i * (std::ptrdiff_t)ldc, ldc, k, n, accumulate);
      break;
    case 1:
      nt_rows<1>(a + i * (std::ptrdiff_t)lda, lda, b, ldb,
                 c + i * (std::ptrdiff_t)ldc, ldc, k, n, accumulate);
      break;
    default: break;
  }
}

// ----------------------------------------------------------------- gemm_tn
// c[k,n] += a[m,k]^T b[m,n]: reduction runs over rows of a and b, so the
// accumulator tile lives in rows of c.

template <int MR>
void tn_rows(const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, int m, int n, bool accumulate) {
  // a points at column block kk0 (MR columns); c points at row kk0.
  int j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d acc0[MR], acc1[MR];
    for (int r = 0; r < MR; ++r) {
      if (accumulate) {
        acc0[r] = _mm256_loadu_pd(c + r * (std::ptrdiff_t)ldc + j);
        acc1[r] = _mm256_loadu_pd(c + r * (std::ptrdiff_t)ldc + j + 4);
      } else {
        acc0[r] = _mm256_setzero_pd();
        acc1[r] = _mm256_setzero_pd();
      }
    }
    for (int i = 0; i < m; ++i) {
      const __m256d b0 = _mm256_loadu_pd(b + i * (std::ptrdiff_t)ldb + j);
      const __m256d b1 = _mm256_loadu_pd(b + i * (std::ptrdiff_t)ldb + j + 4);
      for (int r = 0; r < MR; ++r) {
        const __m256d av = _mm256_set1_pd(a[i * (std::ptrdiff_t)lda + r]);
        acc0[r] = _mm256_fmadd_pd(av, b0, acc0[r]);
        acc1[r] = _mm256_fmadd_pd(av, b1, acc1[r]);
      }
    }
    for (int r = 0; r < MR; ++r) {
      _mm256_storeu_pd(c + r * (std::ptrdiff_t)ldc + j, acc0[r]);
      _mm256_storeu_pd(c + r * (std::ptrdiff_t)ldc + j + 4, acc1[r]);
    }
  }
  for (; j < n; j += 4) {
    const int rem = n - j;
    const __m256i msk = tail_mask(rem >= 4 ? 4 : rem);
    __m256d acc[MR];
    for (int r = 0; r < MR; ++r) {
      if (accumulate) {
        acc[r] = rem >= 4
                     ? _mm256_loadu_pd(c + r * (std::ptrdiff_t)ldc + j)
                     : _mm256_maskload_pd(c + r * (std::ptrdiff_t)ldc + j, msk);
      } else {
        acc[r] = _mm256_setzero_pd();
      }
    }
    for (int i = 0; i < m; ++i) {
      const __m256d bv =
          rem >= 4 ? _mm256_loadu_pd(b + i * (std::ptrdiff_t)ldb + j)
                   : _mm256_maskload_pd(b + i * (std::ptrdiff_t)ldb + j, msk);
      for (int r = 0; r < MR; ++r)
        acc[r] = _mm256_fmadd_pd(
            _mm256_set1_pd(a[i * (std::ptrdiff_t)lda + r]), bv, acc[r]);
    }
    for (int r = 0; r < MR; ++r) {
      if (rem >= 4)
        _mm256_storeu_pd(c + r * (std::ptrdiff_t)ldc + j, acc[r]);
      else
        _mm256_maskstore_pd(c + r * (std::ptrdiff_t)ldc + j, msk, acc[r]);
    }
  }
}

void v_gemm_tn(const double* a, int lda, const double* b, int ldb, double* c,
               int ldc, int m, int k, int n, bool accumulate) {
  int kk = 0;
  for (; kk + 4 <= k; kk += 4)
    tn_rows<4>(a + kk, lda, b, ldb, c + kk * (std::ptrdiff_t)ldc, ldc, m, n,
               accumulate);
  switch (k - kk) {
    case 3:
      tn_rows<3>(a + kk, lda, b, ldb, c + kk * (std::ptrdiff_t)ldc, ldc, m, n,
                 accumulate);
      break;
    case 2:
      tn_rows<2>(a + kk, lda, b, ldb, c + kk * (std::ptrdiff_t)ldc, ldc, m, n,
                 accumulate);
      break;
    case 1:
      tn_rows<1>(a + kk, lda, b, ldb, c + kk * (std::ptrdiff_t)ldc, ldc, m, n,
                 accumulate);
      break;
    default: break;
  }
}

// ------------------------------------------------------------- elementwise

void v_add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void v_scale(const double* x, double alpha, double* out, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

void v_relu(const double* x, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void v_relu_backward(const double* x, const double* gout, double* gx,
                     std::size_t n, bool accumulate) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(gout + i));
    if (accumulate) g = _mm256_add_pd(g, _mm256_loadu_pd(gx + i));
    _mm256_storeu_pd(gx + i, g);
  }
  for (; i < n; ++i) {
    const double g = x[i] > 0.0 ? gout[i] : 0.0;
    gx[i] = accumulate ? gx[i] + g : g;
  }
}

// Cephes-style exp on 4 lanes. exp(x) = 1 + 2r/(Q(r^2)/[r P(r^2)] - 1) after
// reducing x = n ln2 + r; |relative error| stays within a few ulp.
inline __m256d exp4(__m256d x) {
  const __m256d hi = _mm256_set1_pd(709.43613930310391424428);
  const __m256d lo = _mm256_set1_pd(-708.39641853226410622441);
  const __m256d orig = x;
  x = _mm256_min_pd(x, hi);
  x = _mm256_max_pd(x, lo);

  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  __m256d fx = _mm256_fmadd_pd(x, log2e, _mm256_set1_pd(0.5));
  fx = _mm256_floor_pd(fx);

  const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);
  x = _mm256_fnmadd_pd(fx, c1, x);
  x = _mm256_fnmadd_pd(fx, c2, x);

  const __m256d xx = _mm256_mul_pd(x, x);
  __m256d px = _mm256_set1_pd(1.26177193074810590878e-4);
  px = _mm256_fmadd_pd(px, xx, _mm256_set1_pd(3.02994407707441961300e-2));
  px = _mm256_fmadd_pd(px, xx, _mm256_set1_pd(9.99999999999999999910e-1));
  px = _mm256_mul_pd(px, x);

  __m256d qx = _mm256_set1_pd(3.00198505138664455042e-6);
  qx = _mm256_fmadd_pd(qx, xx, _mm256_set1_pd(2.52448340349684104192e-3));
  qx = _mm256_fmadd_pd(qx, xx, _mm256_set1_pd(2.27265548208155028766e-1));
  qx = _mm256_fmadd_pd(qx, xx, _mm256_set1_pd(2.00000000000000000005e0));

  __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), e, _mm256_set1_pd(1.0));

  // scale by 2^n
  const __m128i n32 = _mm256_cvtpd_epi32(fx);
  __m256i n64 = _mm256_cvtepi32_epi64(n32);
  n64 = _mm256_add_epi64(n64, _mm256_set1_epi64x(1023));
  n64 = _mm256_slli_epi64(n64, 52);
  e = _mm256_mul_pd(e, _mm256_castsi256_pd(n64));

  // saturate far outside the reduced range
  const __m256d under = _mm256_cmp_pd(orig, lo, _CMP_LT_OQ);
  e = _mm256_andnot_pd(under, e);
  const __m256d over = _mm256_cmp_pd(orig, hi, _CMP_GT_OQ);
  const __m256d inf = _mm256_set1_pd(HUGE_VAL);
  return _mm256_blendv_pd(e, inf, over);
}

void v_vexp(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, exp4(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = std::exp(x[i]);
}

double v_sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double r = hsum(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

double v_dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double r = hsum(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

void v_adam_step(double* p, const double* g, double* m, double* v,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2) {
  const __m256d b1 = _mm256_set1_pd(beta1);
  const __m256d b1c = _mm256_set1_pd(1.0 - beta1);
  const __m256d b2 = _mm256_set1_pd(beta2);
  const __m256d b2c = _mm256_set1_pd(1.0 - beta2);
  const __m256d rbc1 = _mm256_set1_pd(1.0 / bc1);
  const __m256d rbc2 = _mm256_set1_pd(1.0 / bc2);
  const __m256d lrv = _mm256_set1_pd(lr);
  const __m256d epsv = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_loadu_pd(g + i);
    __m256d mv = _mm256_loadu_pd(m + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    mv = _mm256_fmadd_pd(b1, mv, _mm256_mul_pd(b1c, gv));
    vv = _mm256_fmadd_pd(b2, vv, _mm256_mul_pd(b2c, _mm256_mul_pd(gv, gv)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_mul_pd(mv, rbc1);
    const __m256d vhat = _mm256_mul_pd(vv, rbc2);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv);
    const __m256d upd = _mm256_div_pd(_mm256_mul_pd(lrv, mhat), denom);
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

const Ops kAvx2Ops = {
    .gemm_nn = v_gemm_nn,
    .gemm_nt = v_gemm_nt,
    .gemm_tn = v_gemm_tn,
    .add = v_add,
    .mul = v_mul,
    .axpy = v_axpy,
    .scale = v_scale,
    .relu = v_relu,
    .relu_backward = v_relu_backward,
    .vexp = v_vexp,
    .sum = v_sum,
    .dot = v_dot,
    .adam_step = v_adam_step,
};

}  // namespace

const Ops& avx2_ops() { return kAvx2Ops; }

}  // namespace agpw::kernels

#endif  // AGPW_HAVE_X86_KERNELS
