#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace dyco {

// One complex baseband frame: interleavable I/Q sample sequences plus label
// and SNR metadata. Samples are stored as f32, matching the file format.
struct IQFrame {
  std::vector<float> i;
  std::vector<float> q;
  uint16_t label = 0;
  int16_t snr_db = 0;

  int64_t length() const { return static_cast<int64_t>(i.size()); }
  std::vector<std::complex<double>> complex_samples() const;
  static IQFrame from_complex(const std::vector<std::complex<double>>& s, uint16_t label, int16_t snr_db);
};

enum class ModClass : uint16_t {
  BPSK = 0,
  QPSK = 1,
  PSK8 = 2,
  QAM16 = 3,
  FSK2 = 4,
  FSK4 = 5,
  AM_DSB = 6,
  TONE = 7,
};

constexpr int kNumModClasses = 8;
const std::vector<std::string>& mod_class_names();
ModClass mod_class_from_name(const std::string& name);  // throws on unknown

struct ChannelConfig {
  int snr_db = 0;
  double cfo_norm = 0.0;   // cycles per frame
  double phase0 = 0.0;     // radians
  double fading_gain = 1.0;
};

// Generate one frame under x = g * s * e^{j(2*pi*cfo*n/L + phase0)} + n,
// with the clean signal normalized to unit average power and complex AWGN
// scaled so 10*log10(P_s/P_n) equals snr_db.
IQFrame synth_frame(ModClass cls, const ChannelConfig& cfg, uint64_t seed, int64_t length = 128,
                    uint64_t frame_index = 0);

struct DatasetSpec {
  std::vector<ModClass> classes;
  std::vector<int> snrs_db;
  int64_t frames_per_class_per_snr = 0;
  int64_t length = 128;
};

// Deterministic per (spec, seed); one RNG stream per frame.
std::vector<IQFrame> synth_dataset(const DatasetSpec& spec, uint64_t seed);

// "DYCO" frame file: little-endian, magic "DYCO", u32 version=1, u32 L,
// u32 frame count, u16 class count, class names (u8 length + UTF-8), then
// per frame u16 label, i16 snr_db, 2*L f32 interleaved I/Q.
void write_frames(const std::vector<IQFrame>& frames, const std::string& path);
std::vector<IQFrame> read_frames(const std::string& path);

}  // namespace dyco
