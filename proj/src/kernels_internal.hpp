#pragma once

#include <cstddef>

// Shared between the dispatch table and the per-backend translation units.
namespace layergen::kern::detail {

struct OpsTable {
    void (*matmul_nn)(double*, const double*, const double*, std::size_t, std::size_t, std::size_t);
    void (*matmul_nt)(double*, const double*, const double*, std::size_t, std::size_t, std::size_t);
    void (*matmul_tn)(double*, const double*, const double*, std::size_t, std::size_t, std::size_t);
    void (*add)(double*, const double*, const double*, std::size_t);
    void (*sub)(double*, const double*, const double*, std::size_t);
    void (*mul)(double*, const double*, const double*, std::size_t);
    void (*scale)(double*, const double*, double, std::size_t);
    void (*axpy)(double*, double, const double*, std::size_t);
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum)(const double*, std::size_t);
};

const OpsTable& scalar_table();
#if defined(LAYERGEN_HAVE_AVX2)
const OpsTable& avx2_table();
#endif

}  // namespace layergen::kern::detail
