#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "genicl/kernels.hpp"

namespace genicl::kernels {
namespace {

template <class T>
std::vector<T> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

// Lengths straddle every unroll boundary (8/16 floats, 4/8 doubles) and the tails.
const std::size_t kLengths[] = {0, 1, 3, 4, 7, 8, 9, 15, 16, 17, 31, 64, 100, 257};

template <class T>
void check_equivalence(T tol) {
  for (std::size_t n : kLengths) {
    const auto a = random_vector<T>(n, 11 + n);
    const auto b = random_vector<T>(n, 97 + n);
    long double ref = 0;
    for (std::size_t i = 0; i < n; ++i) ref += static_cast<long double>(a[i]) * b[i];
    EXPECT_NEAR(scalar::dot(a.data(), b.data(), n), static_cast<T>(ref), tol * (1 + n)) << "n=" << n;
    EXPECT_NEAR(avx2::dot(a.data(), b.data(), n), static_cast<T>(ref), tol * (1 + n)) << "n=" << n;

    auto y1 = random_vector<T>(n, 5 + n);
    auto y2 = y1;
    scalar::axpy(T(0.37), a.data(), y1.data(), n);
    avx2::axpy(T(0.37), a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], tol) << "n=" << n << " i=" << i;
  }
}

TEST(Kernels, FloatVariantsAgreeWithExtendedPrecisionReference) { check_equivalence<float>(1e-6f); }

TEST(Kernels, DoubleVariantsAgreeWithExtendedPrecisionReference) { check_equivalence<double>(1e-14); }

TEST(Kernels, DispatchCanBePinnedAndRestored) {
  set_backend(Backend::scalar);
  EXPECT_EQ(active_backend(), Backend::scalar);
  const float a[3] = {1, 2, 3};
  EXPECT_FLOAT_EQ(dot(a, a, 3), 14.0f);
  if (avx2_available()) {
    set_backend(Backend::avx2);
    EXPECT_EQ(active_backend(), Backend::avx2);
    EXPECT_FLOAT_EQ(dot(a, a, 3), 14.0f);
  }
  reset_backend();
  EXPECT_EQ(active_backend(), avx2_available() ? Backend::avx2 : Backend::scalar);
}

}  // namespace
}  // namespace genicl::kernels
