#include "dyco/priors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dyco/fft.hpp"

namespace dyco {
namespace {

std::vector<std::complex<double>> spectrum(const std::vector<std::complex<double>>& x) {
  return is_power_of_two(static_cast<int64_t>(x.size())) ? fft(x) : dft(x);
}

}  // namespace

std::vector<double> cycle_spectrum_p4(const IQFrame& frame) {
  auto s = frame.complex_samples();
  for (auto& v : s) {
    auto v2 = v * v;
    v = v2 * v2;
  }
  auto spec = spectrum(s);
  int64_t L = frame.length();
  std::vector<double> p4(static_cast<size_t>(L));
  double mx = 0.0;
  for (int64_t k = 0; k < L; ++k) {
    p4[static_cast<size_t>(k)] = std::abs(spec[static_cast<size_t>(k)]);
    mx = std::max(mx, p4[static_cast<size_t>(k)]);
  }
  for (auto& v : p4) v /= (mx + kPriorEps);
  return p4;
}

std::vector<double> regularized_envelope(const IQFrame& frame) {
  int64_t L = frame.length();
  std::vector<double> r(static_cast<size_t>(L));
  double mean = 0.0;
  for (int64_t n = 0; n < L; ++n) {
    double re = frame.i[static_cast<size_t>(n)], im = frame.q[static_cast<size_t>(n)];
    r[static_cast<size_t>(n)] = std::sqrt(re * re + im * im);
    mean += r[static_cast<size_t>(n)];
  }
  mean /= static_cast<double>(L);

  std::vector<std::complex<double>> rcn(static_cast<size_t>(L));
  double maxdev = 0.0;
  for (int64_t n = 0; n < L; ++n) maxdev = std::max(maxdev, std::abs(r[static_cast<size_t>(n)] - mean));
  for (int64_t n = 0; n < L; ++n)
    rcn[static_cast<size_t>(n)] = (r[static_cast<size_t>(n)] - mean) / (maxdev + kPriorEps);

  auto spec = spectrum(rcn);
  double gamma_max = 0.0;
  for (const auto& v : spec) gamma_max = std::max(gamma_max, std::norm(v));
  gamma_max /= static_cast<double>(L);

  std::vector<double> e(static_cast<size_t>(L));
  double mx = 0.0;
  for (int64_t n = 0; n < L; ++n) {
    e[static_cast<size_t>(n)] = r[static_cast<size_t>(n)] / (gamma_max + kPriorEps);
    mx = std::max(mx, std::abs(e[static_cast<size_t>(n)]));
  }
  for (auto& v : e) v /= (mx + kPriorEps);
  return e;
}

std::vector<double> downsample_paa(const std::vector<double>& series, int64_t s) {
  int64_t L = static_cast<int64_t>(series.size());
  if (s <= 0 || L % s != 0)
    throw std::invalid_argument("downsample_paa: target length " + std::to_string(s) +
                                " must divide series length " + std::to_string(L));
  int64_t block = L / s;
  std::vector<double> out(static_cast<size_t>(s), 0.0);
  for (int64_t i = 0; i < s; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < block; ++j) acc += series[static_cast<size_t>(i * block + j)];
    out[static_cast<size_t>(i)] = acc / static_cast<double>(block);
  }
  return out;
}

GafPair gaf(const std::vector<double>& series) {
  int64_t S = static_cast<int64_t>(series.size());
  double lo = *std::min_element(series.begin(), series.end());
  double hi = *std::max_element(series.begin(), series.end());
  std::vector<double> phi(static_cast<size_t>(S));
  for (int64_t i = 0; i < S; ++i) {
    double x = hi > lo ? 2.0 * (series[static_cast<size_t>(i)] - lo) / (hi - lo) - 1.0 : 0.0;
    x = std::clamp(x, -1.0, 1.0);
    phi[static_cast<size_t>(i)] = std::acos(x);
  }
  GafPair out;
  out.gasf.resize(static_cast<size_t>(S * S));
  out.gadf.resize(static_cast<size_t>(S * S));
  for (int64_t i = 0; i < S; ++i)
    for (int64_t j = 0; j < S; ++j) {
      out.gasf[static_cast<size_t>(i * S + j)] = std::cos(phi[static_cast<size_t>(i)] + phi[static_cast<size_t>(j)]);
      out.gadf[static_cast<size_t>(i * S + j)] = std::sin(phi[static_cast<size_t>(i)] - phi[static_cast<size_t>(j)]);
    }
  return out;
}

PriorFeatures extract_priors(const IQFrame& frame) {
  PriorFeatures f;
  f.p4 = cycle_spectrum_p4(frame);
  f.e_reg = regularized_envelope(frame);
  GafPair g1 = gaf(downsample_paa(f.p4, kGafSize));
  GafPair g2 = gaf(downsample_paa(f.e_reg, kGafSize));
  f.gasf_p4 = std::move(g1.gasf);
  f.gadf_p4 = std::move(g1.gadf);
  f.gasf_ereg = std::move(g2.gasf);
  f.gadf_ereg = std::move(g2.gadf);
  return f;
}

}  // namespace dyco
