#include "lipvox/kernels.hpp"

#include <fftw3.h>
#include <omp.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <vector>

#include "lipvox/audio_dsp.hpp"
#include "lipvox/error.hpp"

namespace lipvox::kernels {
namespace {

using dsp::kFftBins;
using dsp::kFftSize;
using dsp::kFrameOffset;
using dsp::kHop;
using dsp::kMelBands;
using dsp::kWindow;

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
template <typename T>
using FftwPtr = std::unique_ptr<T, FftwFree>;

// Plans are created once; fftw_execute_dft_* on fresh aligned buffers is
// thread-safe.
struct Plans {
  fftw_plan forward;
  fftw_plan inverse;
};

const Plans& plans() {
  static Plans p = [] {
    FftwPtr<double> real(fftw_alloc_real(kFftSize));
    FftwPtr<fftw_complex> cplx(fftw_alloc_complex(kFftBins));
    Plans out{};
    out.forward = fftw_plan_dft_r2c_1d(kFftSize, real.get(), cplx.get(), FFTW_ESTIMATE);
    out.inverse = fftw_plan_dft_c2r_1d(kFftSize, cplx.get(), real.get(), FFTW_ESTIMATE);
    return out;
  }();
  return p;
}

struct FrameBuffers {
  FftwPtr<double> real{fftw_alloc_real(kFftSize)};
  FftwPtr<fftw_complex> cplx{fftw_alloc_complex(kFftBins)};
};

template <typename Sample>
void window_frame(std::span<const Sample> signal, int64_t frame, double* dst) {
  const auto& win = dsp::analysis_window();
  const int64_t start = frame * kHop - kFrameOffset;
  const auto len = static_cast<int64_t>(signal.size());
  for (int i = 0; i < kWindow; ++i) {
    const int64_t n = start + i;
    dst[i] = (n >= 0 && n < len) ? win[i] * static_cast<double>(signal[n]) : 0.0;
  }
  for (int i = kWindow; i < kFftSize; ++i) dst[i] = 0.0;
}

double window_energy() {
  static const double sum = [] {
    double s = 0.0;
    for (double w : dsp::analysis_window()) s += w * w;
    return s;
  }();
  return sum;
}

void power_frame(std::span<const float> signal, int64_t frame, FrameBuffers& buf,
                 double* out) {
  window_frame(signal, frame, buf.real.get());
  fftw_execute_dft_r2c(plans().forward, buf.real.get(), buf.cplx.get());
  const double scale = 1.0 / window_energy();
  for (int k = 0; k < kFftBins; ++k) {
    const double re = buf.cplx.get()[k][0];
    const double im = buf.cplx.get()[k][1];
    out[k] = (re * re + im * im) * scale;
  }
}

void complex_frame(std::span<const double> signal, int64_t frame, FrameBuffers& buf,
                   std::complex<double>* out) {
  window_frame(signal, frame, buf.real.get());
  fftw_execute_dft_r2c(plans().forward, buf.real.get(), buf.cplx.get());
  for (int k = 0; k < kFftBins; ++k) {
    out[k] = {buf.cplx.get()[k][0], buf.cplx.get()[k][1]};
  }
}

// Inverse FFT of one frame, multiplied by the synthesis window; writes
// kWindow samples into dst.
void inverse_frame(const std::complex<double>* spec, FrameBuffers& buf, double* dst) {
  for (int k = 0; k < kFftBins; ++k) {
    buf.cplx.get()[k][0] = spec[k].real();
    buf.cplx.get()[k][1] = spec[k].imag();
  }
  fftw_execute_dft_c2r(plans().inverse, buf.cplx.get(), buf.real.get());
  const auto& win = dsp::analysis_window();
  for (int i = 0; i < kWindow; ++i) dst[i] = buf.real.get()[i] / kFftSize * win[i];
}

void log_mel_frame(const double* power, float* out) {
  const auto& fb = dsp::mel_filterbank();
  for (int b = 0; b < kMelBands; ++b) {
    const double* row = fb.data() + static_cast<size_t>(b) * kFftBins;
    double energy = 0.0;
    for (int k = 0; k < kFftBins; ++k) energy += row[k] * power[k];
    const double logp = energy > 0.0 ? std::log(energy) : dsp::kLogFloor;
    out[b] = static_cast<float>(dsp::normalize_log_mel(logp));
  }
}

double poly_kernel(const double* a, const double* b, int64_t dim) {
  double dot = 0.0;
  for (int64_t k = 0; k < dim; ++k) dot += a[k] * b[k];
  const double base = dot / static_cast<double>(dim) + 1.0;
  return base * base * base;
}

void check_size(size_t have, size_t need, const char* what) {
  if (have < need) throw InvalidArgument(std::string("kernel buffer too small: ") + what);
}

}  // namespace

void stft_power(std::span<const float> signal, int64_t num_frames, std::span<double> out,
                Backend backend) {
  check_size(out.size(), static_cast<size_t>(num_frames) * kFftBins, "stft_power");
  plans();
  if (backend == Backend::kSerial) {
    FrameBuffers buf;
    for (int64_t t = 0; t < num_frames; ++t) {
      power_frame(signal, t, buf, out.data() + t * kFftBins);
    }
    return;
  }
#pragma omp parallel
  {
    FrameBuffers buf;
#pragma omp for schedule(static)
    for (int64_t t = 0; t < num_frames; ++t) {
      power_frame(signal, t, buf, out.data() + t * kFftBins);
    }
  }
}

void stft(std::span<const double> signal, int64_t num_frames,
          std::span<std::complex<double>> out, Backend backend) {
  check_size(out.size(), static_cast<size_t>(num_frames) * kFftBins, "stft");
  plans();
  if (backend == Backend::kSerial) {
    FrameBuffers buf;
    for (int64_t t = 0; t < num_frames; ++t) {
      complex_frame(signal, t, buf, out.data() + t * kFftBins);
    }
    return;
  }
#pragma omp parallel
  {
    FrameBuffers buf;
#pragma omp for schedule(static)
    for (int64_t t = 0; t < num_frames; ++t) {
      complex_frame(signal, t, buf, out.data() + t * kFftBins);
    }
  }
}

void istft(std::span<const std::complex<double>> spectrum, int64_t num_frames,
           std::span<double> out, Backend backend) {
  check_size(spectrum.size(), static_cast<size_t>(num_frames) * kFftBins, "istft");
  plans();
  const auto len = static_cast<int64_t>(out.size());
  std::vector<double> frames(static_cast<size_t>(num_frames) * kWindow);
  if (backend == Backend::kSerial) {
    FrameBuffers buf;
    for (int64_t t = 0; t < num_frames; ++t) {
      inverse_frame(spectrum.data() + t * kFftBins, buf, frames.data() + t * kWindow);
    }
  } else {
#pragma omp parallel
    {
      FrameBuffers buf;
#pragma omp for schedule(static)
      for (int64_t t = 0; t < num_frames; ++t) {
        inverse_frame(spectrum.data() + t * kFftBins, buf, frames.data() + t * kWindow);
      }
    }
  }
  // Overlap-add runs in frame order in both modes so results match bitwise.
  const auto& win = dsp::analysis_window();
  std::vector<double> norm(static_cast<size_t>(len), 0.0);
  std::fill(out.begin(), out.end(), 0.0);
  for (int64_t t = 0; t < num_frames; ++t) {
    const int64_t start = t * kHop - kFrameOffset;
    for (int i = 0; i < kWindow; ++i) {
      const int64_t n = start + i;
      if (n < 0 || n >= len) continue;
      out[n] += frames[t * kWindow + i];
      norm[n] += win[i] * win[i];
    }
  }
  for (int64_t n = 0; n < len; ++n) {
    if (norm[n] > 1e-8) out[n] /= norm[n];
  }
}

void log_mel(std::span<const double> power, int64_t num_frames, std::span<float> out,
             Backend backend) {
  check_size(power.size(), static_cast<size_t>(num_frames) * kFftBins, "log_mel power");
  check_size(out.size(), static_cast<size_t>(num_frames) * kMelBands, "log_mel out");
  dsp::mel_filterbank();
  if (backend == Backend::kSerial) {
    for (int64_t t = 0; t < num_frames; ++t) {
      log_mel_frame(power.data() + t * kFftBins, out.data() + t * kMelBands);
    }
    return;
  }
#pragma omp parallel for schedule(static)
  for (int64_t t = 0; t < num_frames; ++t) {
    log_mel_frame(power.data() + t * kFftBins, out.data() + t * kMelBands);
  }
}

void pairwise_l2(std::span<const float> rows, int64_t n, int64_t dim,
                 std::span<double> out, Backend backend) {
  check_size(rows.size(), static_cast<size_t>(n * dim), "pairwise_l2 rows");
  check_size(out.size(), static_cast<size_t>(n * n), "pairwise_l2 out");
  auto row_pass = [&](int64_t i) {
    const float* a = rows.data() + i * dim;
    for (int64_t j = 0; j < n; ++j) {
      const float* b = rows.data() + j * dim;
      double acc = 0.0;
      for (int64_t k = 0; k < dim; ++k) {
        const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        acc += d * d;
      }
      out[i * n + j] = std::sqrt(acc);
    }
  };
  if (backend == Backend::kSerial) {
    for (int64_t i = 0; i < n; ++i) row_pass(i);
    return;
  }
#pragma omp parallel for schedule(dynamic, 4)
  for (int64_t i = 0; i < n; ++i) row_pass(i);
}

double poly_kernel_sum(std::span<const double> x, int64_t nx, std::span<const double> y,
                       int64_t ny, int64_t dim, bool exclude_diagonal, Backend backend) {
  check_size(x.size(), static_cast<size_t>(nx * dim), "poly_kernel_sum x");
  check_size(y.size(), static_cast<size_t>(ny * dim), "poly_kernel_sum y");
  if (exclude_diagonal && nx != ny) {
    throw InvalidArgument("poly_kernel_sum: diagonal exclusion needs equal set sizes");
  }
  if (backend == Backend::kSerial) {
    double total = 0.0;
    for (int64_t i = 0; i < nx; ++i) {
      for (int64_t j = 0; j < ny; ++j) {
        if (exclude_diagonal && i == j) continue;
        total += poly_kernel(x.data() + i * dim, y.data() + j * dim, dim);
      }
    }
    return total;
  }
  // Per-row partial sums, reduced in row order for a thread-count
  // independent result.
  std::vector<double> partial(static_cast<size_t>(nx), 0.0);
#pragma omp parallel for schedule(dynamic, 4)
  for (int64_t i = 0; i < nx; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < ny; ++j) {
      if (exclude_diagonal && i == j) continue;
      acc += poly_kernel(x.data() + i * dim, y.data() + j * dim, dim);
    }
    partial[i] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace lipvox::kernels
