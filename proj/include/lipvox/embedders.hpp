#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lipvox/audio_dsp.hpp"
#include "lipvox/checkpoint.hpp"
#include "lipvox/synth_corpus.hpp"

namespace lipvox::embed {

inline constexpr int64_t kContentDim = 1024;
inline constexpr int64_t kSpeakerDim = 256;
inline constexpr int64_t kSpeakerSteps = 100;
inline constexpr int64_t kSpeakerStepTolerance = 5;

// Mel (B, steps, 80) -> per-step features (B, steps, 1024). The phoneme
// head sits on top and is only used during pretraining.
class ContentEncoderImpl : public torch::nn::Module {
 public:
  ContentEncoderImpl();
  torch::Tensor forward(torch::Tensor mel);
  torch::Tensor logits(const torch::Tensor& features);

 private:
  torch::nn::Sequential convs_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(ContentEncoder);

// Mel (B, ~100, 80) -> unit-norm (B, 256).
class SpeakerEncoderImpl : public torch::nn::Module {
 public:
  SpeakerEncoderImpl();
  torch::Tensor forward(torch::Tensor mel);

 private:
  torch::nn::Sequential convs_{nullptr};
  torch::nn::Linear proj_{nullptr};
};
TORCH_MODULE(SpeakerEncoder);

struct SurrogateConfig {
  int64_t content_steps = 400;
  int64_t speaker_steps = 600;
  int64_t batch_size = 16;
  double learning_rate = 1e-3;
  double cosine_scale = 16.0;
  uint64_t seed = 11;
};

// Both frozen networks. Once loaded every parameter has requires_grad off
// and the modules stay in eval mode.
class Surrogates {
 public:
  Surrogates();

  bool loaded() const { return loaded_; }
  void freeze();

  // (steps, 80) or (B, steps, 80) -> same leading dims x 1024.
  torch::Tensor content_encode(const torch::Tensor& mel) const;
  // (B, steps, 80) -> (B, 256); differentiable w.r.t. the mel.
  torch::Tensor speaker_embed(const torch::Tensor& mel) const;

  std::vector<float> content_encode(const dsp::MelSpectrogram& mel) const;
  std::vector<float> speaker_embed(const dsp::MelSpectrogram& mel) const;

  uint64_t checksum() const;

  ContentEncoder content{nullptr};
  SpeakerEncoder speaker{nullptr};

 private:
  void require_loaded() const;
  bool loaded_ = false;
};

// Progress callback: (stage, step, loss).
using SurrogateProgress = std::function<void(const std::string&, int64_t, double)>;

Surrogates pretrain_surrogates(const corpus::CorpusData& data, const SurrogateConfig& config,
                               const SurrogateProgress& progress = {});

// Stored under "surrogate.content.*" and "surrogate.speaker.*".
void put_surrogates(ckpt::Container& c, const Surrogates& s);
Surrogates get_surrogates(const ckpt::Container& c);

void save_surrogates(const Surrogates& s, const std::filesystem::path& path);
Surrogates load_surrogates(const std::filesystem::path& path);

double voice_similarity(const std::vector<float>& a, const std::vector<float>& b);
// Row-wise cosine of (B, d) tensors.
torch::Tensor voice_similarity(const torch::Tensor& a, const torch::Tensor& b);

// (steps, 80) float tensor view of a mel.
torch::Tensor mel_tensor(const dsp::MelSpectrogram& mel);

}  // namespace lipvox::embed
