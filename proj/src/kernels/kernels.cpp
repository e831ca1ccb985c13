#include "genicl/kernels.hpp"

#include <atomic>

#include "genicl/errors.hpp"

namespace genicl::kernels {

#if !defined(GENICL_HAVE_AVX2)
// Non-x86 builds: keep the symbols so the equivalence tests link; they are
// never selected because avx2_available() reports false.
namespace avx2 {
float dot(const float* a, const float* b, std::size_t n) { return scalar::dot(a, b, n); }
double dot(const double* a, const double* b, std::size_t n) { return scalar::dot(a, b, n); }
void axpy(float alpha, const float* x, float* y, std::size_t n) { scalar::axpy(alpha, x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { scalar::axpy(alpha, x, y, n); }
}  // namespace avx2
#endif

namespace {

struct Table {
  float (*dot_f)(const float*, const float*, std::size_t);
  double (*dot_d)(const double*, const double*, std::size_t);
  void (*axpy_f)(float, const float*, float*, std::size_t);
  void (*axpy_d)(double, const double*, double*, std::size_t);
  Backend backend;
};

const Table kScalar{&scalar::dot, &scalar::dot, &scalar::axpy, &scalar::axpy, Backend::scalar};
const Table kAvx2{&avx2::dot, &avx2::dot, &avx2::axpy, &avx2::axpy, Backend::avx2};

bool detect_avx2() {
#if defined(GENICL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Table* detected_table() { return detect_avx2() ? &kAvx2 : &kScalar; }

std::atomic<const Table*>& table() {
  static std::atomic<const Table*> t{detected_table()};
  return t;
}

inline const Table& current() { return *table().load(std::memory_order_relaxed); }

}  // namespace

std::string_view backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

bool avx2_available() {
  static const bool ok = detect_avx2();
  return ok;
}

Backend active_backend() { return current().backend; }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_available()) {
    throw ConfigError("avx2 kernels requested but not supported on this CPU/build");
  }
  table().store(b == Backend::avx2 ? &kAvx2 : &kScalar, std::memory_order_relaxed);
}

void reset_backend() { table().store(detected_table(), std::memory_order_relaxed); }

float dot(const float* a, const float* b, std::size_t n) { return current().dot_f(a, b, n); }
double dot(const double* a, const double* b, std::size_t n) { return current().dot_d(a, b, n); }
void axpy(float alpha, const float* x, float* y, std::size_t n) { current().axpy_f(alpha, x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { current().axpy_d(alpha, x, y, n); }

}  // namespace genicl::kernels
