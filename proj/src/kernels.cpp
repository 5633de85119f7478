#include "agpw/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace agpw::kernels {

namespace {

// ---------------------------------------------------------------------------
// Scalar reference kernels. Loop orders match the vector variants so the two
// differ only in rounding of fused operations.
// ---------------------------------------------------------------------------

void s_gemm_nn(const double* a, int lda, const double* b, int ldb, double* c,
               int ldc, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = a + static_cast<std::ptrdiff_t>(i) * lda;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + static_cast<std::ptrdiff_t>(kk) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void s_gemm_nt(const double* a, int lda, const double* b, int ldb, double* c,
               int ldc, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::ptrdiff_t>(i) * lda;
    double* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::ptrdiff_t>(j) * ldb;
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void s_gemm_tn(const double* a, int lda, const double* b, int ldb, double* c,
               int ldc, int m, int k, int n, bool accumulate) {
  if (!accumulate) {
    for (int kk = 0; kk < k; ++kk) {
      double* crow = c + static_cast<std::ptrdiff_t>(kk) * ldc;
      for (int j = 0; j < n; ++j) crow[j] = 0.0;
    }
  }
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::ptrdiff_t>(i) * lda;
    const double* brow = b + static_cast<std::ptrdiff_t>(i) * ldb;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      double* crow = c + static_cast<std::ptrdiff_t>(kk) * ldc;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void s_add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void s_scale(const double* x, double alpha, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

void s_relu(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_relu_backward(const double* x, const double* gout, double* gx,
                     std::size_t n, bool accumulate) {
  if (accumulate) {
    for (std::size_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0 ? gout[i] : 0.0;
  } else {
    for (std::size_t i = 0; i < n; ++i) gx[i] = x[i] > 0.0 ? gout[i] : 0.0;
  }
}

void s_vexp(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

double s_sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double s_dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void s_adam_step(double* p, const double* g, double* m, double* v,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

const Ops kScalarOps = {
    .gemm_nn = s_gemm_nn,
    .gemm_nt = s_gemm_nt,
    .gemm_tn = s_gemm_tn,
    .add = s_add,
    .mul = s_mul,
    .axpy = s_axpy,
    .scale = s_scale,
    .relu = s_relu,
    .relu_backward = s_relu_backward,
    .vexp = s_vexp,
    .sum = s_sum,
    .dot = s_dot,
    .adam_step = s_adam_step,
};

const Ops* g_active = &kScalarOps;
Backend g_backend = Backend::kScalar;
bool g_initialized = false;

void ensure_initialized() {
  if (g_initialized) return;
  const Backend b = default_backend();
  switch (b) {
    case Backend::kScalar: g_active = &scalar_ops(); break;
#ifdef AGPW_HAVE_X86_KERNELS
    case Backend::kAvx2: g_active = &avx2_ops(); break;
    case Backend::kAvx512: g_active = &avx512_ops(); break;
#else
    default: g_active = &scalar_ops(); break;
#endif
  }
  g_backend = b;
  g_initialized = true;
}

}  // namespace

const Ops& scalar_ops() { return kScalarOps; }

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::kScalar: return "scalar";
    case Backend::kAvx2: return "avx2";
    case Backend::kAvx512: return "avx512";
  }
  return "unknown";
}

bool backend_supported(Backend b) {
  if (b == Backend::kScalar) return true;
#ifdef AGPW_HAVE_X86_KERNELS
  if (b == Backend::kAvx2)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  if (b == Backend::kAvx512)
    return __builtin_cpu_supports("avx512f") &&
           __builtin_cpu_supports("avx512dq");
#endif
  return false;
}

Backend default_backend() {
  if (const char* env = std::getenv("AGPW_KERNELS")) {
    const std::string want(env);
    for (Backend b : {Backend::kScalar, Backend::kAvx2, Backend::kAvx512}) {
      if (want == backend_name(b)) {
        if (!backend_supported(b))
          throw std::runtime_error("AGPW_KERNELS requests unsupported backend: " + want);
        return b;
      }
    }
    throw std::runtime_error("AGPW_KERNELS: unknown backend name: " + want);
  }
  if (backend_supported(Backend::kAvx512)) return Backend::kAvx512;
  if (backend_supported(Backend::kAvx2)) return Backend::kAvx2;
  return Backend::kScalar;
}

Backend active_backend() {
  ensure_initialized();
  return g_backend;
}

void set_backend(Backend b) {
  if (!backend_supported(b))
    throw std::runtime_error(std::string("kernel backend not supported here: ") +
                             backend_name(b));
  switch (b) {
    case Backend::kScalar: g_active = &scalar_ops(); break;
#ifdef AGPW_HAVE_X86_KERNELS
    case Backend::kAvx2: g_active = &avx2_ops(); break;
    case Backend::kAvx512: g_active = &avx512_ops(); break;
#else
    default: break;
#endif
  }
  g_backend = b;
  g_initialized = true;
}

void gemm_nn(const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, int m, int k, int n, bool accumulate) {
  ensure_initialized();
  g_active->gemm_nn(a, lda, b, ldb, c, ldc, m, k, n, accumulate);
}

void gemm_nt(const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, int m, int k, int n, bool accumulate) {
  ensure_initialized();
  g_active->gemm_nt(a, lda, b, ldb, c, ldc, m, k, n, accumulate);
}

void gemm_tn(const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, int m, int k, int n, bool accumulate) {
  ensure_initialized();
  g_active->gemm_tn(a, lda, b, ldb, c, ldc, m, k, n, accumulate);
}

void add(const double* a, const double* b, double* out, std::size_t n) {
  ensure_initialized();
  g_active->add(a, b, out, n);
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
  ensure_initialized();
  g_active->mul(a, b, out, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  ensure_initialized();
  g_active->axpy(alpha, x, y, n);
}

void scale(const double* x, double alpha, double* out, std::size_t n) {
  ensure_initialized();
  g_active->scale(x, alpha, out, n);
}

void relu(const double* x, double* out, std::size_t n) {
  ensure_initialized();
  g_active->relu(x, out, n);
}

void relu_backward(const double* x, const double* gout, double* gx,
                   std::size_t n, bool accumulate) {
  ensure_initialized();
  g_active->relu_backward(x, gout, gx, n, accumulate);
}

void vexp(const double* x, double* out, std::size_t n) {
  ensure_initialized();
  g_active->vexp(x, out, n);
}

double sum(const double* x, std::size_t n) {
  ensure_initialized();
  return g_active->sum(x, n);
}

double dot(const double* a, const double* b, std::size_t n) {
  ensure_initialized();
  return g_active->dot(a, b, n);
}

void adam_step(double* p, const double* g, double* m, double* v, std::size_t n,
               double lr, double beta1, double beta2, double eps, double bc1,
               double bc2) {
  ensure_initialized();
  g_active->adam_step(p, g, m, v, n, lr, beta1, beta2, eps, bc1, bc2);
}

#ifndef AGPW_HAVE_X86_KERNELS
const Ops& avx2_ops() { return kScalarOps; }
const Ops& avx512_ops() { return kScalarOps; }
#endif

}  // namespace agpw::kernels
