#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "lipvox/audio_dsp.hpp"
#include "lipvox/embedders.hpp"
#include "lipvox/model_core.hpp"
#include "lipvox/synth_corpus.hpp"
#include "lipvox/train_loop.hpp"

namespace lipvox::infer {

enum class Mode { kMean, kSample };

std::string to_string(Mode m);
Mode mode_from(const std::string& s);

struct SynthesisRequest {
  corpus::Frames frames;            // F >= 5
  dsp::Waveform voice_reference;    // >= 1 s; the first second is used
  Mode mode = Mode::kMean;
  uint64_t seed = 0;
  int griffin_lim_iterations = 60;
};

struct SynthesisResult {
  dsp::MelSpectrogram mel;  // 4F x 80
  dsp::Waveform audio;      // 4F * 160 samples
};

// A trained generator plus its frozen surrogates, in evaluation mode.
class Synthesizer {
 public:
  explicit Synthesizer(const std::filesystem::path& checkpoint);
  explicit Synthesizer(const train::TrainState& state);

  // (1, 4F, 256) distribution from raw frames.
  model::LatentDistribution lip_distribution(const corpus::Frames& frames) const;
  // (B, 3, T, 96, 96) input -> distribution.
  model::LatentDistribution lip_distribution(const torch::Tensor& video) const;

  // (1, 256) embedding of the first 100 steps of a mel / waveform.
  torch::Tensor voice_embedding(const dsp::MelSpectrogram& mel) const;
  torch::Tensor voice_embedding(const dsp::Waveform& wave) const;

  // mean: decode mu; sample: decode mu + sigma * eps with eps from `seed`.
  torch::Tensor decode(const model::LatentDistribution& d, const torch::Tensor& voice, Mode mode,
                       uint64_t seed = 0) const;

  SynthesisResult synthesize(const SynthesisRequest& request, bool with_audio = true) const;

  // Flattened sample-mode mels for seeds 0..n-1, (n x 4F*80).
  std::vector<float> sample_outputs(const corpus::Frames& frames, const dsp::Waveform& voice,
                                    int64_t n) const;

  const embed::Surrogates& surrogates() const { return surrogates_; }
  model::CropMode crop_mode() const { return crop_; }
  // Hex digest of the generator parameters.
  std::string checkpoint_id() const;

 private:
  model::Generator generator_{nullptr};
  embed::Surrogates surrogates_;
  model::CropMode crop_ = model::CropMode::kFullFace;
};

// L1 distance between speaker embeddings of the first 100 steps of each mel.
double sed(const embed::Surrogates& s, const dsp::MelSpectrogram& generated,
           const dsp::MelSpectrogram& reference);

// Row-major (n x dim) feature matrix.
struct FeatureSet {
  int64_t n = 0;
  int64_t dim = 0;
  std::vector<double> values;

  void add(std::span<const float> row);
  void add(std::span<const double> row);
  std::span<const double> row(int64_t i) const { return {values.data() + i * dim, size_t(dim)}; }
};

// Mean-pooled content-encoder features of a mel (1024-d).
std::vector<double> content_features(const embed::Surrogates& s, const dsp::MelSpectrogram& mel);

inline constexpr double kEigenFloor = 1e-10;

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^1/2) with unbiased covariances.
double fdsd(const FeatureSet& gen, const FeatureSet& ref);

// Unbiased squared MMD with the cubic polynomial kernel, times 1e3.
double kdsd(const FeatureSet& gen, const FeatureSet& ref);
double kdsd_raw(const FeatureSet& gen, const FeatureSet& ref);

// Percentage of rows whose nearest other row is at least `delta` away.
double unique_percentage(std::span<const float> rows, int64_t n, int64_t dim, double delta);

inline constexpr double kDefaultDelta = 0.5;

double generative_strength(const Synthesizer& model, const corpus::Frames& frames,
                           const dsp::Waveform& voice_reference, int64_t n,
                           double delta = kDefaultDelta);

struct EvalConfig {
  int64_t stride_frames = 5;
  Mode mode = Mode::kMean;
  uint64_t seed = 0;
  // Score the ground-truth windows against themselves.
  bool ground_truth = false;
};

// Lip windows at every stride over each held-out utterance; voice from the
// first second of the same utterance.
nlohmann::json eval_corpus(const Synthesizer& model, const corpus::CorpusData& data,
                           const EvalConfig& config);

}  // namespace lipvox::infer
