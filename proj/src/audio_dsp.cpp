#include "lipvox/audio_dsp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>

#include "lipvox/error.hpp"
#include "lipvox/kernels.hpp"

namespace lipvox::dsp {
namespace {

constexpr double kPi = std::numbers::pi;

double bin_hz(int k) { return static_cast<double>(k) * kSampleRate / kFftSize; }

// Edges of the 80 triangles: kMelBands + 2 points equally spaced in mel.
const std::vector<double>& band_edges_hz() {
  static const std::vector<double> edges = [] {
    std::vector<double> e(kMelBands + 2);
    const double lo = hz_to_mel(kMelMinHz);
    const double hi = hz_to_mel(kMelMaxHz);
    for (int i = 0; i < kMelBands + 2; ++i) {
      e[i] = mel_to_hz(lo + (hi - lo) * i / (kMelBands + 1));
    }
    return e;
  }();
  return edges;
}

double triangle(double hz, double left, double centre, double right) {
  if (hz <= left || hz >= right) return 0.0;
  return hz <= centre ? (hz - left) / (centre - left) : (right - hz) / (right - centre);
}

const Eigen::MatrixXd& filterbank_matrix() {
  static const Eigen::MatrixXd m = [] {
    const auto& fb = mel_filterbank();
    Eigen::MatrixXd out(kMelBands, kFftBins);
    for (int b = 0; b < kMelBands; ++b) {
      for (int k = 0; k < kFftBins; ++k) out(b, k) = fb[b * kFftBins + k];
    }
    return out;
  }();
  return m;
}

// The pseudo-inverse overshoots around loud bands and clamping its negative
// lobes leaks energy into quiet ones. Multiplicative updates keep the
// linear power non-negative while pulling F * power back onto the target.
void refine_linear_power(const Eigen::VectorXd& target, Eigen::VectorXd& power) {
  constexpr int kIterations = 200;
  const auto& fb = filterbank_matrix();
  const Eigen::VectorXd col_sum = fb.colwise().sum().transpose();
  power = power.cwiseMax(1e-12);
  for (int it = 0; it < kIterations; ++it) {
    const Eigen::VectorXd projected = (fb * power).cwiseMax(1e-30);
    const Eigen::VectorXd ratio = target.cwiseQuotient(projected);
    const Eigen::VectorXd update = fb.transpose() * ratio;
    for (int k = 0; k < kFftBins; ++k) {
      if (col_sum[k] > 0.0) power[k] *= update[k] / col_sum[k];
    }
  }
}

const Eigen::MatrixXd& filterbank_pinv() {
  static const Eigen::MatrixXd pinv = [] {
    return Eigen::MatrixXd(filterbank_matrix().completeOrthogonalDecomposition().pseudoInverse());
  }();
  return pinv;
}

uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ostream& os, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
void put_u16(std::ostream& os, uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

double decode_sample(const unsigned char* p, int bits, bool is_float) {
  if (is_float) {
    if (bits == 32) {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
    double d;
    std::memcpy(&d, p, 8);
    return d;
  }
  switch (bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16:
      return static_cast<int16_t>(read_u16(p)) / 32768.0;
    case 24: {
      int32_t v = static_cast<int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
      if (v & 0x800000) v |= ~0xFFFFFF;
      return v / 8388608.0;
    }
    case 32:
      return static_cast<int32_t>(read_u32(p)) / 2147483648.0;
    default:
      throw CorruptData("unsupported PCM bit depth: " + std::to_string(bits));
  }
}

}  // namespace

double hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * std::expm1(mel / 1127.0); }

const std::vector<double>& mel_filterbank() {
  static const std::vector<double> fb = [] {
    const auto& e = band_edges_hz();
    std::vector<double> w(static_cast<size_t>(kMelBands) * kFftBins, 0.0);
    for (int b = 0; b < kMelBands; ++b) {
      double row_sum = 0.0;
      for (int k = 0; k < kFftBins; ++k) {
        const double v = triangle(bin_hz(k), e[b], e[b + 1], e[b + 2]);
        w[b * kFftBins + k] = v;
        row_sum += v;
      }
      if (row_sum == 0.0) {
        // Narrow low band that falls between FFT bins: use the nearest bin.
        const int k = static_cast<int>(std::lround(e[b + 1] * kFftSize / kSampleRate));
        w[b * kFftBins + k] = 1.0;
      }
    }
    return w;
  }();
  return fb;
}

int mel_band_for_hz(double hz) {
  const auto& e = band_edges_hz();
  int best = -1;
  double best_v = 0.0;
  for (int b = 0; b < kMelBands; ++b) {
    const double v = triangle(hz, e[b], e[b + 1], e[b + 2]);
    if (v > best_v) {
      best_v = v;
      best = b;
    }
  }
  return best;
}

const std::vector<double>& analysis_window() {
  static const std::vector<double> win = [] {
    std::vector<double> w(kWindow);
    for (int i = 0; i < kWindow; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / kWindow);
    return w;
  }();
  return win;
}

Waveform load_wav(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw CorruptData("not a RIFF/WAVE file: " + path.string());
  }
  int channels = 0, rate = 0, bits = 0;
  bool is_float = false;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  size_t data_size = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const uint32_t size = read_u32(chunk + 4);
    const size_t body = pos + 8;
    if (body + size > bytes.size()) {
      if (std::memcmp(chunk, "data", 4) == 0) throw CorruptData("truncated data chunk: " + path.string());
      break;
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0 && size >= 16) {
      uint16_t format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = static_cast<int>(read_u32(chunk + 12));
      bits = read_u16(chunk + 22);
      if (format == 0xFFFE && size >= 40) format = read_u16(chunk + 32);
      if (format != 1 && format != 3) throw CorruptData("unsupported WAV encoding: " + path.string());
      is_float = format == 3;
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt || data == nullptr || channels <= 0 || rate <= 0 || bits % 8 != 0 || bits == 0) {
    throw CorruptData("malformed WAV header: " + path.string());
  }
  const size_t stride = static_cast<size_t>(channels) * (bits / 8);
  const size_t frames = data_size / stride;
  std::vector<float> mono(frames);
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      acc += decode_sample(data + i * stride + c * (bits / 8), bits, is_float);
    }
    mono[i] = static_cast<float>(acc / channels);
  }
  Waveform out;
  out.samples = rate == kSampleRate ? std::move(mono) : resample(mono, rate, kSampleRate);
  float peak = 0.0f;
  for (float s : out.samples) {
    if (!std::isfinite(s)) throw CorruptData("non-finite sample in " + path.string());
    peak = std::max(peak, std::abs(s));
  }
  if (peak > 1.0f) {
    for (float& s : out.samples) s /= peak;
  }
  return out;
}

void save_wav(const Waveform& wave, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path.string());
  const auto n = static_cast<uint32_t>(wave.samples.size());
  out.write("RIFF", 4);
  put_u32(out, 36 + n * 2);
  out.write("WAVEfmt ", 8);
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<uint32_t>(wave.sample_rate));
  put_u32(out, static_cast<uint32_t>(wave.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, n * 2);
  for (float s : wave.samples) {
    const double c = std::clamp(static_cast<double>(s), -1.0, 1.0);
    put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(std::lround(c * 32767.0))));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<float> resample(std::span<const float> samples, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw InvalidArgument("resample: rates must be positive");
  if (from_rate == to_rate) return {samples.begin(), samples.end()};
  constexpr int kZeros = 24;
  const double ratio = static_cast<double>(to_rate) / from_rate;
  const double cutoff = std::min(1.0, ratio) * 0.97;
  const double half_width = kZeros / cutoff;
  const auto in_len = static_cast<int64_t>(samples.size());
  const auto out_len = static_cast<int64_t>(
      (static_cast<int64_t>(samples.size()) * static_cast<int64_t>(to_rate)) / from_rate);
  std::vector<float> out(static_cast<size_t>(out_len));
  for (int64_t n = 0; n < out_len; ++n) {
    const double t = static_cast<double>(n) * from_rate / to_rate;
    const auto lo = static_cast<int64_t>(std::ceil(t - half_width));
    const auto hi = static_cast<int64_t>(std::floor(t + half_width));
    double acc = 0.0;
    for (int64_t i = std::max<int64_t>(lo, 0); i <= std::min(hi, in_len - 1); ++i) {
      const double x = i - t;
      const double arg = kPi * cutoff * x;
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(arg) / arg;
      const double win = 0.5 + 0.5 * std::cos(kPi * x / half_width);
      acc += samples[i] * cutoff * sinc * win;
    }
    out[n] = static_cast<float>(acc);
  }
  return out;
}

MelSpectrogram melspectrogram(const Waveform& wave) {
  if (wave.sample_rate != kSampleRate) throw InvalidArgument("melspectrogram expects 16 kHz audio");
  if (wave.samples.size() < static_cast<size_t>(kWindow)) {
    throw InvalidArgument("waveform shorter than one analysis window");
  }
  MelSpectrogram mel;
  mel.num_steps = static_cast<int64_t>(wave.samples.size()) / kHop;
  std::vector<double> power(static_cast<size_t>(mel.num_steps) * kFftBins);
  kernels::stft_power(wave.samples, mel.num_steps, power);
  mel.values.resize(static_cast<size_t>(mel.num_steps) * kMelBands);
  kernels::log_mel(power, mel.num_steps, mel.values);
  return mel;
}

MelSpectrogram mel_segment(const MelSpectrogram& mel, int64_t start, int64_t length) {
  if (start < 0 || length < 0 || start + length > mel.num_steps) {
    throw InvalidArgument("mel_segment: slice [" + std::to_string(start) + ", " +
                          std::to_string(start + length) + ") outside " +
                          std::to_string(mel.num_steps) + " steps");
  }
  MelSpectrogram out;
  out.num_steps = length;
  out.values.assign(mel.values.begin() + start * kMelBands,
                    mel.values.begin() + (start + length) * kMelBands);
  return out;
}

Waveform griffin_lim(const MelSpectrogram& mel, int iterations) {
  if (iterations < 1) throw InvalidArgument("griffin_lim: iterations must be >= 1");
  for (float v : mel.values) {
    if (!std::isfinite(v)) throw InvalidArgument("griffin_lim: non-finite mel entry");
  }
  const int64_t steps = mel.num_steps;
  const auto& pinv = filterbank_pinv();
  double wenergy = 0.0;
  for (double w : analysis_window()) wenergy += w * w;
  const double wscale = std::sqrt(wenergy);

  // Linear magnitude per (frame, bin) from the normalized log-mel values.
  std::vector<double> magnitude(static_cast<size_t>(steps) * kFftBins);
  Eigen::VectorXd mel_power(kMelBands);
  for (int64_t t = 0; t < steps; ++t) {
    for (int b = 0; b < kMelBands; ++b) {
      const double logp = kLogFloor + mel.at(t, b) * (kLogCeil - kLogFloor);
      mel_power[b] = std::exp(logp);
    }
    Eigen::VectorXd lin = (pinv * mel_power).cwiseMax(0.0);
    refine_linear_power(mel_power, lin);
    for (int k = 0; k < kFftBins; ++k) {
      magnitude[t * kFftBins + k] = std::sqrt(lin[k]) * wscale;
    }
  }

  const auto len = static_cast<size_t>(steps) * kHop;
  std::vector<std::complex<double>> spec(magnitude.size());
  for (size_t i = 0; i < spec.size(); ++i) spec[i] = magnitude[i];
  std::vector<double> signal(len);
  std::vector<std::complex<double>> rebuilt(spec.size());
  for (int it = 0; it < iterations; ++it) {
    kernels::istft(spec, steps, signal);
    kernels::stft(signal, steps, rebuilt);
    for (size_t i = 0; i < spec.size(); ++i) {
      const double a = std::abs(rebuilt[i]);
      spec[i] = a > 1e-12 ? rebuilt[i] * (magnitude[i] / a) : std::complex<double>(magnitude[i]);
    }
  }
  kernels::istft(spec, steps, signal);

  Waveform out;
  out.samples.resize(len);
  for (size_t n = 0; n < len; ++n) {
    out.samples[n] = static_cast<float>(std::clamp(signal[n], -1.0, 1.0));
  }
  return out;
}

}  // namespace lipvox::dsp
