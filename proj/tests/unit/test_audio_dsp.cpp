#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "lipvox/audio_dsp.hpp"
#include "lipvox/error.hpp"
#include "lipvox/kernels.hpp"
#include "test_util.hpp"

using namespace lipvox;
using namespace lipvox::dsp;

namespace {

Waveform tone(double hz, double seconds, double amp = 0.5, int rate = kSampleRate) {
  Waveform w;
  w.sample_rate = rate;
  const auto n = static_cast<size_t>(seconds * rate);
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    w.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * double(i) / rate));
  }
  return w;
}

// Frequency of the largest naive-DFT bin over [lo, hi] Hz in 1 Hz steps.
double dominant_hz(const std::vector<float>& x, int rate, double lo, double hi) {
  double best = 0, best_hz = 0;
  for (double f = lo; f <= hi; f += 1.0) {
    std::complex<double> acc = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      acc += double(x[i]) * std::polar(1.0, -2 * std::numbers::pi * f * double(i) / rate);
    }
    if (std::abs(acc) > best) {
      best = std::abs(acc);
      best_hz = f;
    }
  }
  return best_hz;
}

}  // namespace

TEST(MelScale, MatchesHtkFormula) {
  for (double hz : {0.0, 55.0, 440.0, 1000.0, 7600.0}) {
    EXPECT_NEAR(hz_to_mel(hz), 1127.0 * std::log(1.0 + hz / 700.0), 1e-9);
    EXPECT_NEAR(hz_to_mel(hz), 2595.0 * std::log10(1.0 + hz / 700.0), 1e-5 * (1 + hz));
    EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-7);
  }
}

TEST(MelScale, FilterbankShapeAndSupport) {
  const auto& fb = mel_filterbank();
  ASSERT_EQ(fb.size(), size_t(kMelBands) * kFftBins);
  const double bin_hz = double(kSampleRate) / kFftSize;
  for (int m = 0; m < kMelBands; ++m) {
    double peak = 0;
    for (int k = 0; k < kFftBins; ++k) {
      const double v = fb[size_t(m) * kFftBins + k];
      EXPECT_GE(v, 0.0);
      if (v > 0) {
        EXPECT_GE(k * bin_hz, kMelMinHz - bin_hz);
        EXPECT_LE(k * bin_hz, kMelMaxHz + bin_hz);
      }
      peak = std::max(peak, v);
    }
    EXPECT_GT(peak, 0.0) << "empty band " << m;
  }
}

TEST(MelScale, BandForToneIsMonotone) {
  int prev = -1;
  for (double hz = 100; hz < 7500; hz *= 1.3) {
    const int b = mel_band_for_hz(hz);
    EXPECT_GE(b, prev);
    prev = b;
  }
}

TEST(Normalization, ClampsToUnitInterval) {
  EXPECT_DOUBLE_EQ(normalize_log_mel(-100), 0.0);
  EXPECT_DOUBLE_EQ(normalize_log_mel(100), 1.0);
  EXPECT_DOUBLE_EQ(normalize_log_mel(kLogFloor), 0.0);
  EXPECT_NEAR(normalize_log_mel(0.5 * (kLogFloor + kLogCeil)), 0.5, 1e-12);
}

TEST(StftPower, MatchesNaiveDft) {
  const auto w = tone(523.0, 0.2);
  const int64_t frames = 5;
  std::vector<double> power(frames * kFftBins);
  kernels::stft_power(w.samples, frames, power, kernels::Backend::kSerial);
  const auto& win = analysis_window();
  double wsq = 0;
  for (double v : win) wsq += v * v;
  for (int64_t t = 0; t < frames; ++t) {
    for (int k : {0, 10, 17, 100, 256}) {
      std::complex<double> acc = 0;
      for (int i = 0; i < kWindow; ++i) {
        const int64_t s = t * kHop - kFrameOffset + i;
        const double x = (s >= 0 && s < int64_t(w.samples.size())) ? w.samples[s] : 0.0;
        acc += x * win[i] * std::polar(1.0, -2 * std::numbers::pi * k * i / kFftSize);
      }
      const double expected = std::norm(acc) / wsq;
      EXPECT_NEAR(power[t * kFftBins + k], expected, 1e-9 * std::max(1.0, expected));
    }
  }
}

TEST(Melspectrogram, ShapeRangeAndPeak) {
  const auto w = tone(1000.0, 1.0);
  const auto mel = melspectrogram(w);
  EXPECT_EQ(mel.num_steps, 100);
  ASSERT_EQ(mel.values.size(), size_t(100 * kMelBands));
  for (float v : mel.values) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  const auto row = mel.row(50);
  const int argmax = int(std::max_element(row.begin(), row.end()) - row.begin());
  EXPECT_LE(std::abs(argmax - mel_band_for_hz(1000.0)), 1);
}

TEST(Melspectrogram, SilenceSitsAtFloor) {
  Waveform w;
  w.samples.assign(kSampleRate / 2, 0.0f);
  const auto mel = melspectrogram(w);
  for (float v : mel.values) EXPECT_EQ(v, 0.0f);
}

TEST(Melspectrogram, SegmentCopiesRows) {
  const auto mel = melspectrogram(tone(300.0, 0.5));
  const auto seg = mel_segment(mel, 10, 20);
  ASSERT_EQ(seg.num_steps, 20);
  for (int64_t t = 0; t < 20; ++t) {
    for (int b = 0; b < kMelBands; ++b) EXPECT_EQ(seg.at(t, b), mel.at(t + 10, b));
  }
  EXPECT_THROW(mel_segment(mel, 40, 20), InvalidArgument);
}

TEST(Wav, RoundTripWithinQuantization) {
  support::TempDir dir;
  const auto w = tone(440.0, 0.25, 0.7);
  save_wav(w, dir / "a.wav");
  const auto r = load_wav(dir / "a.wav");
  ASSERT_EQ(r.samples.size(), w.samples.size());
  EXPECT_EQ(r.sample_rate, kSampleRate);
  for (size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(r.samples[i], w.samples[i], 2.0 / 32768);
}

TEST(Wav, ClipsOutOfRange) {
  support::TempDir dir;
  Waveform w;
  w.samples = {2.0f, -3.0f, 0.0f};
  save_wav(w, dir / "c.wav");
  const auto r = load_wav(dir / "c.wav");
  EXPECT_NEAR(r.samples[0], 1.0f, 1e-4);
  EXPECT_NEAR(r.samples[1], -1.0f, 1e-4);
}

TEST(Wav, RejectsMissingAndGarbage) {
  support::TempDir dir;
  EXPECT_THROW(load_wav(dir / "missing.wav"), IoError);
  { std::ofstream(dir / "bad.wav") << "not a wav file at all"; }
  EXPECT_THROW(load_wav(dir / "bad.wav"), Error);
}

TEST(Resample, PreservesToneFrequency) {
  const auto w = tone(440.0, 0.25, 0.5, 8000);
  const auto up = resample(w.samples, 8000, kSampleRate);
  EXPECT_NEAR(double(up.size()), 2.0 * w.samples.size(), 2.0);
  EXPECT_NEAR(dominant_hz(up, kSampleRate, 300, 600), 440.0, 2.0);
}

TEST(GriffinLim, ReconstructionMatchesTargetMel) {
  const auto w = tone(700.0, 0.5);
  const auto mel = melspectrogram(w);
  const auto audio = griffin_lim(mel, 60);
  EXPECT_EQ(int64_t(audio.samples.size()), mel.num_steps * kHop);
  const auto back = melspectrogram(audio);
  ASSERT_EQ(back.num_steps, mel.num_steps);
  double err = 0;
  for (size_t i = 0; i < mel.values.size(); ++i) err += std::abs(back.values[i] - mel.values[i]);
  err /= double(mel.values.size());
  EXPECT_LT(err, 0.05);
}
