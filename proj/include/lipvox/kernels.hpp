#pragma once

// Data-parallel inner loops behind the DSP and metric code. Each kernel has
// a serial reference path and an OpenMP path; the two must agree (bitwise
// for per-row work, to rounding for reductions). Tests and the benchmark
// target compare them.

#include <complex>
#include <cstdint>
#include <span>

namespace lipvox::kernels {

enum class Backend { kSerial, kParallel };

// Power spectrum |X|^2 / sum(w^2) of `num_frames` Hann-windowed
// frames. Frame t starts at t*kHop - kFrameOffset; samples outside the
// signal read as zero. `out` is (num_frames x kFftBins).
void stft_power(std::span<const float> signal, int64_t num_frames,
                std::span<double> out, Backend backend = Backend::kParallel);

// Complex STFT with the same framing, unscaled.
void stft(std::span<const double> signal, int64_t num_frames,
          std::span<std::complex<double>> out,
          Backend backend = Backend::kParallel);

// Inverse of `stft`: windowed overlap-add normalized by the summed squared
// window. `out` has the length of the signal to reconstruct.
void istft(std::span<const std::complex<double>> spectrum, int64_t num_frames,
           std::span<double> out, Backend backend = Backend::kParallel);

// Mel projection, natural log, floor/ceiling clamp and [0,1] normalization.
// `power` is (num_frames x kFftBins), `out` is (num_frames x kMelBands).
void log_mel(std::span<const double> power, int64_t num_frames,
             std::span<float> out, Backend backend = Backend::kParallel);

// Euclidean distances between all rows of an (n x dim) matrix.
void pairwise_l2(std::span<const float> rows, int64_t n, int64_t dim,
                 std::span<double> out, Backend backend = Backend::kParallel);

// Sum of the cubic polynomial kernel (x.y/dim + 1)^3 over all row pairs of
// x (nx x dim) and y (ny x dim). With `exclude_diagonal`, pairs i == j are
// skipped (x and y must then be the same set).
double poly_kernel_sum(std::span<const double> x, int64_t nx,
                       std::span<const double> y, int64_t ny, int64_t dim,
                       bool exclude_diagonal,
                       Backend backend = Backend::kParallel);

}  // namespace lipvox::kernels
