#include "dyco/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace dyco {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

bool is_power_of_two(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& x) {
  int64_t n = static_cast<int64_t>(x.size());
  if (!is_power_of_two(n)) throw std::invalid_argument("fft: length must be a power of two, got " + std::to_string(n));
  std::vector<std::complex<double>> a = x;
  // Bit-reversal permutation.
  for (int64_t i = 1, j = 0; i < n; ++i) {
    int64_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[static_cast<size_t>(i)], a[static_cast<size_t>(j)]);
  }
  for (int64_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * kPi / static_cast<double>(len);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (int64_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int64_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[static_cast<size_t>(i + k)];
        std::complex<double> v = a[static_cast<size_t>(i + k + len / 2)] * w;
        a[static_cast<size_t>(i + k)] = u + v;
        a[static_cast<size_t>(i + k + len / 2)] = u - v;
        w *= wlen;
      }
    }
  }
  return a;
}

std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& x) {
  int64_t n = static_cast<int64_t>(x.size());
  std::vector<std::complex<double>> out(static_cast<size_t>(n));
  for (int64_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (int64_t m = 0; m < n; ++m) {
      double ang = -2.0 * kPi * static_cast<double>(k) * static_cast<double>(m) / static_cast<double>(n);
      acc += x[static_cast<size_t>(m)] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[static_cast<size_t>(k)] = acc;
  }
  return out;
}

}  // namespace dyco
