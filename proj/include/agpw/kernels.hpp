#pragma once

#include <cstddef>

// Data-parallel inner loops behind the tensor engine. Every routine has a
// scalar reference implementation plus AVX2 and AVX-512 variants selected at
// runtime; the variants are equivalence-tested against the scalar kernels.
//
// All matrices are row-major. ld* parameters are row strides (in elements),
// which lets callers address sub-blocks of larger matrices (per-head slices
// of attention projections).

namespace agpw::kernels {

enum class Backend { kScalar, kAvx2, kAvx512 };

const char* backend_name(Backend b);
bool backend_supported(Backend b);

// Highest supported backend, unless the AGPW_KERNELS environment variable
// (scalar|avx2|avx512) overrides the choice.
Backend default_backend();

Backend active_backend();
void set_backend(Backend b);  // throws if unsupported on this machine

// c[m,n] (+)= a[m,k] @ b[k,n]
void gemm_nn(const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, int m, int k, int n, bool accumulate);

// c[m,n] (+)= a[m,k] @ b[n,k]^T
void gemm_nt(const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, int m, int k, int n, bool accumulate);

// c[k,n] (+)= a[m,k]^T @ b[m,n]
void gemm_tn(const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, int m, int k, int n, bool accumulate);

void add(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(const double* x, double alpha, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
// gx (+)= (x > 0) * gout
void relu_backward(const double* x, const double* gout, double* gx,
                   std::size_t n, bool accumulate);
void vexp(const double* x, double* out, std::size_t n);
double sum(const double* x, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);

// Bias-corrected adaptive-moment update for one parameter array.
// bc1 = 1 - beta1^t, bc2 = 1 - beta2^t.
void adam_step(double* p, const double* g, double* m, double* v, std::size_t n,
               double lr, double beta1, double beta2, double eps, double bc1,
               double bc2);

// Implementation tables; one per backend (internal).
struct Ops {
  void (*gemm_nn)(const double*, int, const double*, int, double*, int, int,
                  int, int, bool);
  void (*gemm_nt)(const double*, int, const double*, int, double*, int, int,
                  int, int, bool);
  void (*gemm_tn)(const double*, int, const double*, int, double*, int, int,
                  int, int, bool);
  void (*add)(const double*, const double*, double*, std::size_t);
  void (*mul)(const double*, const double*, double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*scale)(const double*, double, double*, std::size_t);
  void (*relu)(const double*, double*, std::size_t);
  void (*relu_backward)(const double*, const double*, double*, std::size_t,
                        bool);
  void (*vexp)(const double*, double*, std::size_t);
  double (*sum)(const double*, std::size_t);
  double (*dot)(const double*, const double*, std::size_t);
  void (*adam_step)(double*, const double*, double*, double*, std::size_t,
                    double, double, double, double, double, double);
};

const Ops& scalar_ops();
const Ops& avx2_ops();    // defined only when built with x86 kernels
const Ops& avx512_ops();  // defined only when built with x86 kernels

}  // namespace agpw::kernels
