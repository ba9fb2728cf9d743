#include "layergen/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "kernels_internal.hpp"
#include "layergen/errors.hpp"

namespace layergen::kern {

namespace {

bool cpu_has_avx2() {
#if defined(LAYERGEN_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

struct Dispatch {
    Backend backend;
    const detail::OpsTable* ops;

    Dispatch() {
        backend = cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
        if (const char* env = std::getenv("LAYERGEN_KERNELS")) {
            if (std::strcmp(env, "scalar") == 0) backend = Backend::Scalar;
            else if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) backend = Backend::Avx2;
        }
        ops = table_for(backend);
    }

    static const detail::OpsTable* table_for(Backend b) {
#if defined(LAYERGEN_HAVE_AVX2)
        if (b == Backend::Avx2) return &detail::avx2_table();
#endif
        (void)b;
        return &detail::scalar_table();
    }
};

Dispatch& dispatch() {
    static Dispatch d;
    return d;
}

}  // namespace

Backend active_backend() { return dispatch().backend; }

bool avx2_supported() { return cpu_has_avx2(); }

const char* backend_name(Backend b) {
    return b == Backend::Avx2 ? "avx2" : "scalar";
}

void set_backend(Backend b) {
    if (b == Backend::Avx2 && !cpu_has_avx2())
        throw ContractError("set_backend: avx2 not supported on this CPU");
    dispatch().backend = b;
    dispatch().ops = Dispatch::table_for(b);
}

void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n) {
    dispatch().ops->matmul_nn(c, a, b, m, k, n);
}
void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n) {
    dispatch().ops->matmul_nt(c, a, b, m, k, n);
}
void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n) {
    dispatch().ops->matmul_tn(c, a, b, m, k, n);
}
void add(double* out, const double* a, const double* b, std::size_t n) {
    dispatch().ops->add(out, a, b, n);
}
void sub(double* out, const double* a, const double* b, std::size_t n) {
    dispatch().ops->sub(out, a, b, n);
}
void mul(double* out, const double* a, const double* b, std::size_t n) {
    dispatch().ops->mul(out, a, b, n);
}
void scale(double* out, const double* a, double s, std::size_t n) {
    dispatch().ops->scale(out, a, s, n);
}
void axpy(double* y, double a, const double* x, std::size_t n) {
    dispatch().ops->axpy(y, a, x, n);
}
double dot(const double* a, const double* b, std::size_t n) {
    return dispatch().ops->dot(a, b, n);
}
double sum(const double* a, std::size_t n) {
    return dispatch().ops->sum(a, n);
}

}  // namespace layergen::kern
