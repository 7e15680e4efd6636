#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace lipvox::model {

inline constexpr int64_t kVisualDim = 512;
inline constexpr int64_t kContentDim = 1024;
inline constexpr int64_t kLatentDim = 256;
inline constexpr int64_t kSpeakerDim = 256;
inline constexpr int64_t kMelBands = 80;
inline constexpr int64_t kUpsample = 4;
inline constexpr int64_t kReceptiveFrames = 5;

inline constexpr double kSigmaMin = 1e-2;
inline constexpr double kSigmaMax = 10.0;

// Per-timestep diagonal Gaussian; mu and sigma are (B, steps, 256).
struct LatentDistribution {
  torch::Tensor mu;
  torch::Tensor sigma;

  int64_t steps() const { return mu.size(1); }
  LatentDistribution slice(int64_t start, int64_t length) const;
  LatentDistribution detach() const { return {mu.detach(), sigma.detach()}; }
};

enum class CropMode { kFullFace, kLowerHalf };

// uint8 frames (B, T, 96, 96, 3) -> float (B, 3, T, 96, 96) in [0, 1].
torch::Tensor frames_to_input(const torch::Tensor& frames_u8, CropMode crop = CropMode::kFullFace);

// 3D-conv stack, (B, 3, T, 96, 96) -> (B, T, 512). Only the first layer
// looks across time (5 frames).
class VisualEncoderImpl : public torch::nn::Module {
 public:
  VisualEncoderImpl();
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::nn::Sequential blocks_{nullptr};
};
TORCH_MODULE(VisualEncoder);

// Nearest-neighbour repeat along dim 1.
torch::Tensor temporal_upsample(const torch::Tensor& features, int64_t factor = kUpsample);

// BiGRU -> ReLU dense -> (mu, log-variance) heads. Used for both P_l and P_c.
class ProjectionImpl : public torch::nn::Module {
 public:
  explicit ProjectionImpl(int64_t input_dim, int64_t hidden = 256);
  LatentDistribution forward(torch::Tensor x);

 private:
  int64_t input_dim_;
  torch::nn::GRU gru_{nullptr};
  torch::nn::Linear dense_{nullptr};
  torch::nn::Linear mu_head_{nullptr};
  torch::nn::Linear logvar_head_{nullptr};
};
TORCH_MODULE(Projection);

// mu + sigma * eps with eps drawn from `gen`.
torch::Tensor reparam_sample(const LatentDistribution& d, at::Generator& gen);

// [z ; relu(W v)] -> BiLSTM -> 4 dense layers -> sigmoid, (B, steps, 80).
class SpeechDecoderImpl : public torch::nn::Module {
 public:
  SpeechDecoderImpl();
  torch::Tensor forward(torch::Tensor z, torch::Tensor v);

 private:
  torch::nn::Linear speaker_fc_{nullptr};
  torch::nn::LSTM lstm_{nullptr};
  torch::nn::Sequential dense_{nullptr};
};
TORCH_MODULE(SpeechDecoder);

// 1D conv stack over a mel treated as an 80-channel sequence, global average,
// linear score. No normalisation layers.
class CriticImpl : public torch::nn::Module {
 public:
  CriticImpl();
  // (B, steps, 80) -> (B)
  torch::Tensor forward(torch::Tensor mel);

 private:
  torch::nn::Sequential convs_{nullptr};
  torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(Critic);

// Everything the generator trains, grouped so the optimizer and checkpoint
// see a single module tree.
class GeneratorImpl : public torch::nn::Module {
 public:
  GeneratorImpl();

  // (B, 3, T, 96, 96) -> distribution over (B, 4T, 256)
  LatentDistribution lip_distribution(const torch::Tensor& video);
  LatentDistribution content_distribution(const torch::Tensor& content);

  VisualEncoder visual{nullptr};
  Projection lip_proj{nullptr};
  Projection content_proj{nullptr};
  SpeechDecoder decoder{nullptr};
};
TORCH_MODULE(Generator);

// Order-sensitive checksum of every parameter and buffer byte.
uint64_t parameter_checksum(const torch::nn::Module& module);

}  // namespace lipvox::model
