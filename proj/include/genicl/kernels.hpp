#pragma once

// Inner-loop arithmetic used by the transformer. Each kernel has a portable
// scalar reference and an AVX2+FMA variant; the variant is chosen once at
// startup from CPUID and can be pinned by callers (tests, --deterministic).

#include <cstddef>
#include <string_view>

namespace genicl::kernels {

enum class Backend { scalar, avx2 };

std::string_view backend_name(Backend b);

/// True when the CPU reports AVX2 and FMA and the AVX2 translation unit was built.
bool avx2_available();

Backend active_backend();

/// Pins the dispatch table. Throws ConfigError when asking for an unavailable backend.
void set_backend(Backend b);

/// Restores CPU-detected dispatch.
void reset_backend();

float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);

// y += alpha * x
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);

// Direct entry points, used by the equivalence tests.
namespace scalar {
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2

}  // namespace genicl::kernels
