#pragma once

#include <complex>
#include <vector>

namespace dyco {

// Iterative radix-2 Cooley-Tukey FFT. Length must be a power of two.
std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& x);

// Naive O(L^2) DFT, any length. Used as the oracle and as the fallback for
// non-power-of-two inputs.
std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& x);

bool is_power_of_two(int64_t n);

}  // namespace dyco
