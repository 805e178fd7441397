#include <cmath>
#include <complex>

#include "doctest.h"
#include "dyco/fft.hpp"
#include "dyco/priors.hpp"
#include "dyco/rng.hpp"
#include "dyco/signal.hpp"

using namespace dyco;

namespace {

IQFrame tone_frame(int64_t bin, int64_t len) {
  std::vector<std::complex<double>> s(static_cast<size_t>(len));
  for (int64_t n = 0; n < len; ++n)
    s[static_cast<size_t>(n)] =
        std::exp(std::complex<double>(0.0, 2.0 * M_PI * static_cast<double>(bin * n) / static_cast<double>(len)));
  return IQFrame::from_complex(s, 0, 0);
}

}  // namespace

TEST_SUITE("priors") {

TEST_CASE("fft matches the direct dft on random inputs") {
  for (int64_t len : {8, 64, 128}) {
    Rng rng = Rng::stream(static_cast<uint64_t>(len), {1});
    std::vector<std::complex<double>> x(static_cast<size_t>(len));
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    auto fast = fft(x);
    auto slow = dft(x);
    double scale = 0.0;
    for (auto& v : slow) scale = std::max(scale, std::abs(v));
    for (size_t k = 0; k < x.size(); ++k) CHECK(std::abs(fast[k] - slow[k]) / scale < 1e-10);
  }
}

TEST_CASE("fft of a delta is flat and parseval holds") {
  std::vector<std::complex<double>> delta(16, 0.0);
  delta[0] = 1.0;
  auto spec = fft(delta);
  for (auto& v : spec) CHECK(std::abs(v - std::complex<double>(1.0, 0.0)) < 1e-12);

  Rng rng = Rng::stream(2, {2});
  std::vector<std::complex<double>> x(64);
  for (auto& v : x) v = {rng.normal(), rng.normal()};
  auto y = fft(x);
  double ex = 0.0, ey = 0.0;
  for (auto& v : x) ex += std::norm(v);
  for (auto& v : y) ey += std::norm(v);
  CHECK(ey == doctest::Approx(64.0 * ex).epsilon(1e-10));

  CHECK_THROWS_AS(fft(std::vector<std::complex<double>>(12)), std::invalid_argument);
  CHECK(is_power_of_two(64));
  CHECK_FALSE(is_power_of_two(48));
}

TEST_CASE("fourth-power spectrum: dc tone, shifted tone, all-zero guard") {
  IQFrame dc = tone_frame(0, 128);
  auto p4 = cycle_spectrum_p4(dc);
  CHECK(p4[0] == doctest::Approx(1.0).epsilon(1e-7));
  for (size_t k = 1; k < p4.size(); ++k) CHECK(p4[k] < 1e-9);

  // tone at bin f peaks at 4f mod L after the fourth power
  const int64_t f = 37, L = 128;
  auto p4t = cycle_spectrum_p4(tone_frame(f, L));
  int64_t expect = (4 * f) % L;
  for (int64_t k = 0; k < L; ++k) {
    if (k == expect) CHECK(p4t[static_cast<size_t>(k)] == doctest::Approx(1.0).epsilon(1e-7));
    else CHECK(p4t[static_cast<size_t>(k)] < 1e-7);
  }

  IQFrame zero;
  zero.i.assign(64, 0.0f);
  zero.q.assign(64, 0.0f);
  auto pz = cycle_spectrum_p4(zero);
  for (double v : pz) CHECK(v == 0.0);
}

TEST_CASE("fourth-power spectrum of clean qpsk concentrates on symbol-rate lines") {
  ChannelConfig cfg;
  cfg.snr_db = 300;
  IQFrame f = synth_frame(ModClass::QPSK, cfg, 5, 128);
  auto p4 = cycle_spectrum_p4(f);
  // rectangular pulses at 8 samples/symbol put the fourth-power energy on
  // multiples of L/8 = 16
  double on = 0.0, off = 0.0;
  for (int64_t k = 0; k < 128; ++k) {
    if (k % 16 == 0) on += p4[static_cast<size_t>(k)];
    else off += p4[static_cast<size_t>(k)];
  }
  CHECK(on > 100.0 * off);
}

TEST_CASE("fourth-power spectrum invariances: global phase and amplitude") {
  ChannelConfig cfg;
  cfg.snr_db = 10;
  IQFrame f = synth_frame(ModClass::PSK8, cfg, 6, 128);
  auto base = cycle_spectrum_p4(f);

  IQFrame rot = f;
  const double th = 0.73;
  for (int64_t n = 0; n < f.length(); ++n) {
    size_t k = static_cast<size_t>(n);
    rot.i[k] = static_cast<float>(f.i[k] * std::cos(th) - f.q[k] * std::sin(th));
    rot.q[k] = static_cast<float>(f.i[k] * std::sin(th) + f.q[k] * std::cos(th));
  }
  auto rotated = cycle_spectrum_p4(rot);
  for (size_t k = 0; k < base.size(); ++k) CHECK(rotated[k] == doctest::Approx(base[k]).epsilon(1e-4));

  IQFrame scaled = f;
  for (auto& v : scaled.i) v *= 3.0f;
  for (auto& v : scaled.q) v *= 3.0f;
  auto big = cycle_spectrum_p4(scaled);
  for (size_t k = 0; k < base.size(); ++k) CHECK(big[k] == doctest::Approx(base[k]).epsilon(1e-5));
}

TEST_CASE("regularized envelope: constant frame, scale invariance, zero frame") {
  IQFrame c = tone_frame(0, 64);
  auto e = regularized_envelope(c);
  for (double v : e) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

  ChannelConfig cfg;
  cfg.snr_db = 5;
  IQFrame f = synth_frame(ModClass::QAM16, cfg, 7, 128);
  auto base = regularized_envelope(f);
  IQFrame scaled = f;
  for (auto& v : scaled.i) v *= 2.5f;
  for (auto& v : scaled.q) v *= 2.5f;
  auto after = regularized_envelope(scaled);
  for (size_t k = 0; k < base.size(); ++k) CHECK(after[k] == doctest::Approx(base[k]).epsilon(1e-5));

  IQFrame zero;
  zero.i.assign(64, 0.0f);
  zero.q.assign(64, 0.0f);
  for (double v : regularized_envelope(zero)) CHECK(v == 0.0);
}

TEST_CASE("regularized envelope matches an independent recomputation") {
  ChannelConfig cfg;
  cfg.snr_db = 0;
  IQFrame f = synth_frame(ModClass::FSK2, cfg, 8, 128);
  auto got = regularized_envelope(f);

  const int64_t L = f.length();
  const double eps = 1e-8;
  std::vector<double> r(static_cast<size_t>(L));
  double mean = 0.0;
  for (int64_t n = 0; n < L; ++n) {
    r[static_cast<size_t>(n)] = std::hypot(static_cast<double>(f.i[static_cast<size_t>(n)]),
                                           static_cast<double>(f.q[static_cast<size_t>(n)]));
    mean += r[static_cast<size_t>(n)];
  }
  mean /= static_cast<double>(L);
  double peak = 0.0;
  for (double v : r) peak = std::max(peak, std::abs(v - mean));
  std::vector<std::complex<double>> rcn(static_cast<size_t>(L));
  for (int64_t n = 0; n < L; ++n) rcn[static_cast<size_t>(n)] = (r[static_cast<size_t>(n)] - mean) / (peak + eps);
  double gmax = 0.0;
  for (auto& v : dft(rcn)) gmax = std::max(gmax, std::norm(v));
  gmax /= static_cast<double>(L);
  std::vector<double> expect(static_cast<size_t>(L));
  double emax = 0.0;
  for (int64_t n = 0; n < L; ++n) {
    expect[static_cast<size_t>(n)] = r[static_cast<size_t>(n)] / (gmax + eps);
    emax = std::max(emax, std::abs(expect[static_cast<size_t>(n)]));
  }
  for (int64_t n = 0; n < L; ++n)
    CHECK(got[static_cast<size_t>(n)] ==
          doctest::Approx(expect[static_cast<size_t>(n)] / (emax + eps)).epsilon(1e-9));
}

TEST_CASE("piecewise aggregate downsampling") {
  std::vector<double> s{1, 1, 3, 3};
  auto half = downsample_paa(s, 2);
  CHECK(half == std::vector<double>{1, 3});
  CHECK(downsample_paa(s, 4) == s);
  CHECK_THROWS_AS(downsample_paa(s, 3), std::invalid_argument);
  std::vector<double> c(32, 7.0);
  for (double v : downsample_paa(c, 8)) CHECK(v == doctest::Approx(7.0));
}

TEST_CASE("gramian angular fields: analytic cases and structure") {
  auto zeros = gaf(std::vector<double>(5, 4.2));  // constant series -> all-zero rescale
  for (double v : zeros.gasf) CHECK(v == doctest::Approx(-1.0));  // cos(pi/2 + pi/2)
  for (double v : zeros.gadf) CHECK(std::abs(v) < 1e-12);

  auto two = gaf({1.0, -1.0});  // phi = [0, pi]
  CHECK(two.gasf[0] == doctest::Approx(1.0));
  CHECK(two.gasf[1] == doctest::Approx(-1.0));
  CHECK(two.gasf[2] == doctest::Approx(-1.0));
  CHECK(two.gasf[3] == doctest::Approx(1.0));
  for (double v : two.gadf) CHECK(std::abs(v) < 1e-12);

  Rng rng = Rng::stream(9, {3});
  std::vector<double> s(32);
  for (auto& v : s) v = rng.uniform(-2.0, 5.0);
  auto g = gaf(s);
  const int64_t S = 32;
  // min-max rescale to [-1,1] for the diagonal identity
  double lo = s[0], hi = s[0];
  for (double v : s) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (int64_t i = 0; i < S; ++i) {
    double xi = 2.0 * (s[static_cast<size_t>(i)] - lo) / (hi - lo) - 1.0;
    CHECK(g.gasf[static_cast<size_t>(i * S + i)] == doctest::Approx(2.0 * xi * xi - 1.0).epsilon(1e-9));
    CHECK(g.gadf[static_cast<size_t>(i * S + i)] == doctest::Approx(0.0));
    for (int64_t j = 0; j < S; ++j) {
      CHECK(g.gasf[static_cast<size_t>(i * S + j)] == doctest::Approx(g.gasf[static_cast<size_t>(j * S + i)]));
      CHECK(g.gadf[static_cast<size_t>(i * S + j)] ==
            doctest::Approx(-g.gadf[static_cast<size_t>(j * S + i)]));
      CHECK(std::abs(g.gasf[static_cast<size_t>(i * S + j)]) <= 1.0 + 1e-12);
      CHECK(std::abs(g.gadf[static_cast<size_t>(i * S + j)]) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("bundled prior features have the documented shapes and bounds") {
  ChannelConfig cfg;
  cfg.snr_db = 10;
  IQFrame f = synth_frame(ModClass::QPSK, cfg, 10, 128);
  PriorFeatures pf = extract_priors(f);
  CHECK(pf.p4.size() == 128);
  CHECK(pf.e_reg.size() == 128);
  CHECK(pf.gasf_p4.size() == static_cast<size_t>(kGafSize * kGafSize));
  CHECK(pf.gadf_ereg.size() == static_cast<size_t>(kGafSize * kGafSize));
  double mx = 0.0;
  for (double v : pf.p4) {
    CHECK(v >= 0.0);
    mx = std::max(mx, v);
  }
  CHECK(mx <= 1.0);
}

}  // TEST_SUITE
