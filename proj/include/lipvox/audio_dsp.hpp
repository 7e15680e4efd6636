#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace lipvox::dsp {

inline constexpr int kSampleRate = 16000;
inline constexpr int kHop = 160;        // 10 ms
inline constexpr int kWindow = 400;     // 25 ms
inline constexpr int kFftSize = 512;
inline constexpr int kFftBins = kFftSize / 2 + 1;
inline constexpr int kMelBands = 80;
inline constexpr double kMelMinHz = 55.0;
inline constexpr double kMelMaxHz = 7600.0;
// Natural-log mel power is clamped to [kLogFloor, kLogCeil] and mapped
// affinely onto [0, 1]. Fixed so train and eval normalize identically.
inline constexpr double kLogFloor = -11.5;
inline constexpr double kLogCeil = 2.3;
// First sample covered by analysis frame t is t * kHop - kFrameOffset, so
// the window is centred in the middle of its hop interval.
inline constexpr int kFrameOffset = (kWindow - kHop) / 2;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  double seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Row-major (num_steps x 80) matrix of normalized log-mel values in [0, 1].
struct MelSpectrogram {
  int64_t num_steps = 0;
  std::vector<float> values;

  float at(int64_t step, int band) const {
    return values[static_cast<size_t>(step) * kMelBands + band];
  }
  std::span<const float> row(int64_t step) const {
    return {values.data() + step * kMelBands, static_cast<size_t>(kMelBands)};
  }
  bool empty() const { return num_steps == 0; }
};

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// (80 x 257) triangular filterbank spanning kMelMinHz..kMelMaxHz.
const std::vector<double>& mel_filterbank();
// Band whose triangle responds most strongly to a tone at `hz`.
int mel_band_for_hz(double hz);

// Hann window of length kWindow (periodic).
const std::vector<double>& analysis_window();

Waveform load_wav(const std::filesystem::path& path);
// Writes 16-bit PCM mono. Samples are clipped to [-1, 1].
void save_wav(const Waveform& wave, const std::filesystem::path& path);

// Windowed-sinc sample-rate conversion.
std::vector<float> resample(std::span<const float> samples, int from_rate,
                            int to_rate);

MelSpectrogram melspectrogram(const Waveform& wave);
MelSpectrogram mel_segment(const MelSpectrogram& mel, int64_t start,
                           int64_t length);
Waveform griffin_lim(const MelSpectrogram& mel, int iterations = 60);

// Maps a raw natural-log mel power to the normalized [0, 1] scale.
inline double normalize_log_mel(double log_power) {
  const double clamped =
      log_power < kLogFloor ? kLogFloor : (log_power > kLogCeil ? kLogCeil : log_power);
  return (clamped - kLogFloor) / (kLogCeil - kLogFloor);
}

}  // namespace lipvox::dsp
