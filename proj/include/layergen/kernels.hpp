#pragma once

#include <cstddef>

// Data-parallel inner loops behind the tensor ops. Every kernel has a scalar
// reference implementation; on x86-64 an AVX2+FMA variant is compiled in and
// selected at runtime when the CPU supports it. The two paths are
// equivalence-tested against each other (FMA changes rounding, so equivalence
// is tight-tolerance, not bit-exact).
namespace layergen::kern {

enum class Backend { Scalar, Avx2 };

// Backend currently driving the dispatch table. Defaults to the best the CPU
// supports; the LAYERGEN_KERNELS environment variable ("scalar" | "avx2")
// overrides the default at startup.
Backend active_backend();

// Force a backend (throws ContractError if unsupported on this CPU).
void set_backend(Backend b);

bool avx2_supported();
const char* backend_name(Backend b);

// c[m,n] = a[m,k] * b[k,n]
void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n);
// c[m,n] = a[m,k] * b[n,k]^T   (b stored row-major [n,k])
void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n);
// c[m,n] = a[k,m]^T * b[k,n]   (a stored row-major [k,m])
void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n);

void add(double* out, const double* a, const double* b, std::size_t n);
void sub(double* out, const double* a, const double* b, std::size_t n);
void mul(double* out, const double* a, const double* b, std::size_t n);
void scale(double* out, const double* a, double s, std::size_t n);

// y += a * x
void axpy(double* y, double a, const double* x, std::size_t n);

double dot(const double* a, const double* b, std::size_t n);
double sum(const double* a, std::size_t n);

}  // namespace layergen::kern
