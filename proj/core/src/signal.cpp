#include "dyco/signal.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dyco/rng.hpp"

namespace dyco {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int64_t kSamplesPerSymbol = 8;

using CVec = std::vector<std::complex<double>>;

// Clean unit-power baseband waveforms, rectangular pulse at 8 samples/symbol.
CVec clean_signal(ModClass cls, int64_t L, Rng& rng) {
  CVec s(static_cast<size_t>(L));
  int64_t nsym = (L + kSamplesPerSymbol - 1) / kSamplesPerSymbol;
  switch (cls) {
    case ModClass::BPSK: {
      for (int64_t k = 0; k < nsym; ++k) {
        double a = rng.uniform_int(0, 1) ? 1.0 : -1.0;
        for (int64_t n = k * kSamplesPerSymbol; n < std::min(L, (k + 1) * kSamplesPerSymbol); ++n)
          s[static_cast<size_t>(n)] = a;
      }
      break;
    }
    case ModClass::QPSK: {
      static const double r = 1.0 / std::sqrt(2.0);
      for (int64_t k = 0; k < nsym; ++k) {
        double re = rng.uniform_int(0, 1) ? r : -r;
        double im = rng.uniform_int(0, 1) ? r : -r;
        for (int64_t n = k * kSamplesPerSymbol; n < std::min(L, (k + 1) * kSamplesPerSymbol); ++n)
          s[static_cast<size_t>(n)] = {re, im};
      }
      break;
    }
    case ModClass::PSK8: {
      for (int64_t k = 0; k < nsym; ++k) {
        double ph = (2.0 * kPi * static_cast<double>(rng.uniform_int(0, 7)) + kPi) / 8.0;
        for (int64_t n = k * kSamplesPerSymbol; n < std::min(L, (k + 1) * kSamplesPerSymbol); ++n)
          s[static_cast<size_t>(n)] = std::polar(1.0, ph);
      }
      break;
    }
    case ModClass::QAM16: {
      static const double levels[4] = {-3.0, -1.0, 1.0, 3.0};
      double norm = 1.0 / std::sqrt(10.0);  // unit average constellation energy
      for (int64_t k = 0; k < nsym; ++k) {
        double re = levels[rng.uniform_int(0, 3)] * norm;
        double im = levels[rng.uniform_int(0, 3)] * norm;
        for (int64_t n = k * kSamplesPerSymbol; n < std::min(L, (k + 1) * kSamplesPerSymbol); ++n)
          s[static_cast<size_t>(n)] = {re, im};
      }
      break;
    }
    case ModClass::FSK2:
    case ModClass::FSK4: {
      // Continuous-phase FSK; tone set in cycles per symbol.
      int levels = cls == ModClass::FSK2 ? 2 : 4;
      static const double f2[2] = {-1.0, 1.0};
      static const double f4[4] = {-1.5, -0.5, 0.5, 1.5};
      const double* freqs = levels == 2 ? f2 : f4;
      double phase = 0.0;
      for (int64_t k = 0; k < nsym; ++k) {
        double step = 2.0 * kPi * freqs[rng.uniform_int(0, levels - 1)] / static_cast<double>(kSamplesPerSymbol);
        for (int64_t n = k * kSamplesPerSymbol; n < std::min(L, (k + 1) * kSamplesPerSymbol); ++n) {
          s[static_cast<size_t>(n)] = std::polar(1.0, phase);
          phase += step;
        }
      }
      break;
    }
    case ModClass::AM_DSB: {
      // Low-frequency random multitone message on a DC carrier.
      double a1 = rng.uniform(0.5, 1.0), a2 = rng.uniform(0.2, 0.8);
      double f1 = rng.uniform(1.0, 3.0), f2m = rng.uniform(3.0, 6.0);
      double p1 = rng.uniform(0.0, 2.0 * kPi), p2 = rng.uniform(0.0, 2.0 * kPi);
      double peak = a1 + a2;
      for (int64_t n = 0; n < L; ++n) {
        double t = static_cast<double>(n) / static_cast<double>(L);
        double m = (a1 * std::cos(2.0 * kPi * f1 * t + p1) + a2 * std::cos(2.0 * kPi * f2m * t + p2)) / peak;
        s[static_cast<size_t>(n)] = 1.0 + 0.5 * m;
      }
      break;
    }
    case ModClass::TONE: {
      for (int64_t n = 0; n < L; ++n) s[static_cast<size_t>(n)] = 1.0;
      break;
    }
    default:
      throw std::invalid_argument("synth: unknown modulation class id " +
                                  std::to_string(static_cast<int>(cls)));
  }
  // Unit average power.
  double p = 0.0;
  for (const auto& v : s) p += std::norm(v);
  p /= static_cast<double>(L);
  double scale = 1.0 / std::sqrt(p);
  for (auto& v : s) v *= scale;
  return s;
}

}  // namespace

std::vector<std::complex<double>> IQFrame::complex_samples() const {
  CVec s(i.size());
  for (size_t n = 0; n < i.size(); ++n) s[n] = {static_cast<double>(i[n]), static_cast<double>(q[n])};
  return s;
}

IQFrame IQFrame::from_complex(const CVec& s, uint16_t label, int16_t snr_db) {
  IQFrame f;
  f.i.resize(s.size());
  f.q.resize(s.size());
  for (size_t n = 0; n < s.size(); ++n) {
    f.i[n] = static_cast<float>(s[n].real());
    f.q[n] = static_cast<float>(s[n].imag());
  }
  f.label = label;
  f.snr_db = snr_db;
  return f;
}

const std::vector<std::string>& mod_class_names() {
  static const std::vector<std::string> names = {"bpsk", "qpsk", "8psk", "16qam",
                                                 "2fsk", "4fsk", "am-dsb", "tone"};
  return names;
}

ModClass mod_class_from_name(const std::string& name) {
  const auto& names = mod_class_names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<ModClass>(i);
  throw std::invalid_argument("unknown modulation class \"" + name + "\"");
}

IQFrame synth_frame(ModClass cls, const ChannelConfig& cfg, uint64_t seed, int64_t length,
                    uint64_t frame_index) {
  if (static_cast<int>(cls) >= kNumModClasses)
    throw std::invalid_argument("synth_frame: unknown class id " + std::to_string(static_cast<int>(cls)));
  if (cfg.fading_gain <= 0.0) throw std::invalid_argument("synth_frame: fading_gain must be > 0");
  Rng sig_rng = Rng::stream(seed, {frame_index, 0});
  Rng noise_rng = Rng::stream(seed, {frame_index, 1});

  CVec s = clean_signal(cls, length, sig_rng);
  double noise_power = std::pow(10.0, -static_cast<double>(cfg.snr_db) / 10.0);
  double nstd = std::sqrt(noise_power / 2.0);
  for (int64_t n = 0; n < length; ++n) {
    double ph = 2.0 * kPi * cfg.cfo_norm * static_cast<double>(n) / static_cast<double>(length) + cfg.phase0;
    std::complex<double> v = s[static_cast<size_t>(n)] * cfg.fading_gain * std::polar(1.0, ph);
    v += std::complex<double>(nstd * noise_rng.normal(), nstd * noise_rng.normal());
    s[static_cast<size_t>(n)] = v;
  }
  return IQFrame::from_complex(s, static_cast<uint16_t>(cls), static_cast<int16_t>(cfg.snr_db));
}

std::vector<IQFrame> synth_dataset(const DatasetSpec& spec, uint64_t seed) {
  if (spec.classes.empty() || spec.snrs_db.empty() || spec.frames_per_class_per_snr < 1)
    throw std::invalid_argument("synth_dataset: empty spec");
  std::vector<IQFrame> out;
  out.reserve(static_cast<size_t>(spec.classes.size() * spec.snrs_db.size() *
                                  static_cast<size_t>(spec.frames_per_class_per_snr)));
  uint64_t frame_index = 0;
  for (ModClass cls : spec.classes)
    for (int snr : spec.snrs_db)
      for (int64_t k = 0; k < spec.frames_per_class_per_snr; ++k) {
        Rng chan_rng = Rng::stream(seed, {frame_index, 2});
        ChannelConfig cfg;
        cfg.snr_db = snr;
        cfg.phase0 = chan_rng.uniform(0.0, 2.0 * kPi);
        cfg.cfo_norm = chan_rng.uniform(-1.0, 1.0);
        out.push_back(synth_frame(cls, cfg, seed, spec.length, frame_index));
        ++frame_index;
      }
  return out;
}

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw std::runtime_error(path + ": truncated reading " + what + " at offset " +
                             std::to_string(static_cast<long long>(is.tellg())));
  return v;
}

}  // namespace

void write_frames(const std::vector<IQFrame>& frames, const std::string& path) {
  uint32_t L = frames.empty() ? 0 : static_cast<uint32_t>(frames[0].length());
  for (const auto& f : frames)
    if (static_cast<uint32_t>(f.length()) != L || f.i.size() != f.q.size())
      throw std::invalid_argument("write_frames: inconsistent frame lengths");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write("DYCO", 4);
  put<uint32_t>(os, 1);
  put<uint32_t>(os, L);
  put<uint32_t>(os, static_cast<uint32_t>(frames.size()));
  const auto& names = mod_class_names();
  put<uint16_t>(os, static_cast<uint16_t>(names.size()));
  for (const auto& n : names) {
    put<uint8_t>(os, static_cast<uint8_t>(n.size()));
    os.write(n.data(), static_cast<std::streamsize>(n.size()));
  }
  for (const auto& f : frames) {
    put<uint16_t>(os, f.label);
    put<int16_t>(os, f.snr_db);
    for (uint32_t n = 0; n < L; ++n) {
      put<float>(os, f.i[n]);
      put<float>(os, f.q[n]);
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<IQFrame> read_frames(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DYCO", 4) != 0)
    throw std::runtime_error(path + ": bad magic at offset 0, expected \"DYCO\"");
  uint32_t version = get<uint32_t>(is, path, "version");
  if (version != 1) throw std::runtime_error(path + ": unsupported DYCO version " + std::to_string(version));
  uint32_t L = get<uint32_t>(is, path, "frame length");
  uint32_t count = get<uint32_t>(is, path, "frame count");
  uint16_t nclasses = get<uint16_t>(is, path, "class count");
  for (uint16_t c = 0; c < nclasses; ++c) {
    uint8_t nlen = get<uint8_t>(is, path, "class name length");
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (!is) throw std::runtime_error(path + ": truncated class name at offset " +
                                      std::to_string(static_cast<long long>(is.tellg())));
  }
  std::vector<IQFrame> out(count);
  for (uint32_t f = 0; f < count; ++f) {
    out[f].label = get<uint16_t>(is, path, "label");
    out[f].snr_db = get<int16_t>(is, path, "snr");
    out[f].i.resize(L);
    out[f].q.resize(L);
    for (uint32_t n = 0; n < L; ++n) {
      out[f].i[n] = get<float>(is, path, "sample");
      out[f].q[n] = get<float>(is, path, "sample");
    }
    for (float v : out[f].i)
      if (!std::isfinite(v)) throw std::runtime_error(path + ": non-finite sample in frame " + std::to_string(f));
    for (float v : out[f].q)
      if (!std::isfinite(v)) throw std::runtime_error(path + ": non-finite sample in frame " + std::to_string(f));
  }
  return out;
}

}  // namespace dyco
