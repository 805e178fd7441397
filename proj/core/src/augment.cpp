#include "dyco/augment.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace dyco {
namespace {
constexpr double kPi = 3.14159265358979323846;
}

IQFrame rotate(const IQFrame& f, double theta) {
  IQFrame out = f;
  double c = std::cos(theta), s = std::sin(theta);
  for (size_t n = 0; n < f.i.size(); ++n) {
    double re = f.i[n], im = f.q[n];
    out.i[n] = static_cast<float>(re * c - im * s);
    out.q[n] = static_cast<float>(re * s + im * c);
  }
  return out;
}

IQFrame iq_flip(const IQFrame& f, FlipMode mode) {
  IQFrame out = f;
  switch (mode) {
    case FlipMode::I:
      for (auto& v : out.i) v = -v;
      break;
    case FlipMode::Q:
      for (auto& v : out.q) v = -v;
      break;
    case FlipMode::Both:
      for (auto& v : out.i) v = -v;
      for (auto& v : out.q) v = -v;
      break;
    default:
      throw std::invalid_argument("iq_flip: unknown mode");
  }
  return out;
}

IQFrame time_shift(const IQFrame& f, int64_t delta) {
  int64_t L = f.length();
  IQFrame out = f;
  for (int64_t n = 0; n < L; ++n) {
    int64_t src = ((n - delta) % L + L) % L;
    out.i[static_cast<size_t>(n)] = f.i[static_cast<size_t>(src)];
    out.q[static_cast<size_t>(n)] = f.q[static_cast<size_t>(src)];
  }
  return out;
}

IQFrame awgn(const IQFrame& f, double sigma, Rng& stream) {
  IQFrame out = f;
  double comp_std = sigma / std::sqrt(2.0);  // sigma^2 total split across I/Q
  for (size_t n = 0; n < f.i.size(); ++n) {
    out.i[n] = static_cast<float>(f.i[n] + comp_std * stream.normal());
    out.q[n] = static_cast<float>(f.q[n] + comp_std * stream.normal());
  }
  return out;
}

IQFrame freq_offset(const IQFrame& f, double df) {
  int64_t L = f.length();
  IQFrame out = f;
  for (int64_t n = 0; n < L; ++n) {
    double ph = 2.0 * kPi * df * static_cast<double>(n) / static_cast<double>(L);
    double c = std::cos(ph), s = std::sin(ph);
    double re = f.i[static_cast<size_t>(n)], im = f.q[static_cast<size_t>(n)];
    out.i[static_cast<size_t>(n)] = static_cast<float>(re * c - im * s);
    out.q[static_cast<size_t>(n)] = static_cast<float>(re * s + im * c);
  }
  return out;
}

IQFrame amp_scale(const IQFrame& f, double alpha) {
  IQFrame out = f;
  for (size_t n = 0; n < f.i.size(); ++n) {
    out.i[n] = static_cast<float>(f.i[n] * alpha);
    out.q[n] = static_cast<float>(f.q[n] * alpha);
  }
  return out;
}

IQFrame apply_policy(const IQFrame& f, const AugmentPolicy& policy, Rng& stream) {
  IQFrame out = f;
  int64_t L = f.length();
  // Gate draws happen unconditionally so the stream layout is stable.
  if (stream.uniform() < policy.p_rotate) out = rotate(out, stream.uniform(policy.theta_min, policy.theta_max));
  if (stream.uniform() < policy.p_flip) out = iq_flip(out, static_cast<FlipMode>(stream.uniform_int(0, 2)));
  if (stream.uniform() < policy.p_shift) out = time_shift(out, stream.uniform_int(1, std::max<int64_t>(1, L / 16)));
  if (stream.uniform() < policy.p_awgn) out = awgn(out, stream.uniform(policy.sigma_min, policy.sigma_max), stream);
  if (stream.uniform() < policy.p_cfo) out = freq_offset(out, stream.uniform(policy.cfo_min, policy.cfo_max));
  if (stream.uniform() < policy.p_scale) out = amp_scale(out, stream.uniform(policy.scale_min, policy.scale_max));
  return out;
}

std::string AugmentPolicy::to_json() const {
  nlohmann::json j{{"p_rotate", p_rotate}, {"p_flip", p_flip},     {"p_shift", p_shift},
                   {"p_awgn", p_awgn},     {"p_cfo", p_cfo},       {"p_scale", p_scale},
                   {"theta_min", theta_min}, {"theta_max", theta_max},
                   {"sigma_min", sigma_min}, {"sigma_max", sigma_max},
                   {"cfo_min", cfo_min},   {"cfo_max", cfo_max},
                   {"scale_min", scale_min}, {"scale_max", scale_max}};
  return j.dump(2);
}

AugmentPolicy AugmentPolicy::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  AugmentPolicy p;
  auto read = [&](const char* key, double& dst) {
    if (j.contains(key)) dst = j.at(key).get<double>();
  };
  read("p_rotate", p.p_rotate);
  read("p_flip", p.p_flip);
  read("p_shift", p.p_shift);
  read("p_awgn", p.p_awgn);
  read("p_cfo", p.p_cfo);
  read("p_scale", p.p_scale);
  read("theta_min", p.theta_min);
  read("theta_max", p.theta_max);
  read("sigma_min", p.sigma_min);
  read("sigma_max", p.sigma_max);
  read("cfo_min", p.cfo_min);
  read("cfo_max", p.cfo_max);
  read("scale_min", p.scale_min);
  read("scale_max", p.scale_max);
  return p;
}

}  // namespace dyco
