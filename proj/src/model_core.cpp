#include "lipvox/model_core.hpp"

#include <cmath>

#include "lipvox/error.hpp"

namespace lipvox::model {

namespace nn = torch::nn;

LatentDistribution LatentDistribution::slice(int64_t start, int64_t length) const {
  return {mu.narrow(1, start, length), sigma.narrow(1, start, length)};
}

torch::Tensor frames_to_input(const torch::Tensor& frames_u8, CropMode crop) {
  if (frames_u8.dim() != 5 || frames_u8.size(2) != 96 || frames_u8.size(3) != 96 ||
      frames_u8.size(4) != 3) {
    throw InvalidArgument("frames must be (B, T, 96, 96, 3)");
  }
  auto x = frames_u8.to(torch::kFloat32).div_(255.0f);
  if (crop == CropMode::kLowerHalf) {
    // Lower 48 rows, each repeated twice to restore 96.
    x = x.narrow(2, 48, 48).repeat_interleave(2, 2);
  }
  return x.permute({0, 4, 1, 2, 3}).contiguous();
}

VisualEncoderImpl::VisualEncoderImpl() {
  const std::vector<int64_t> channels{3, 32, 64, 128, 256, 512, 512};
  blocks_ = nn::Sequential();
  for (size_t i = 0; i + 1 < channels.size(); ++i) {
    const int64_t kt = i == 0 ? kReceptiveFrames : 1;
    const int64_t stride = i + 1 < channels.size() - 1 ? 2 : 1;
    blocks_->push_back(nn::Conv3d(nn::Conv3dOptions(channels[i], channels[i + 1], {kt, 3, 3})
                                      .stride({1, stride, stride})
                                      .padding({kt / 2, 1, 1})
                                      .bias(false)));
    blocks_->push_back(nn::BatchNorm3d(channels[i + 1]));
    blocks_->push_back(nn::ReLU());
  }
  register_module("blocks", blocks_);
}

torch::Tensor VisualEncoderImpl::forward(torch::Tensor x) {
  if (x.dim() != 5 || x.size(1) != 3 || x.size(3) != 96 || x.size(4) != 96) {
    throw InvalidArgument("visual encoder expects (B, 3, T, 96, 96)");
  }
  if (x.size(2) < kReceptiveFrames) {
    throw InvalidArgument("visual encoder needs at least 5 frames");
  }
  x = blocks_->forward(x);           // (B, 512, T, 3, 3)
  x = x.mean({3, 4});                // (B, 512, T)
  return x.transpose(1, 2).contiguous();
}

torch::Tensor temporal_upsample(const torch::Tensor& features, int64_t factor) {
  return features.repeat_interleave(factor, 1);
}

ProjectionImpl::ProjectionImpl(int64_t input_dim, int64_t hidden) : input_dim_(input_dim) {
  gru_ = register_module(
      "gru", nn::GRU(nn::GRUOptions(input_dim, hidden).batch_first(true).bidirectional(true)));
  dense_ = register_module("dense", nn::Linear(2 * hidden, 2 * hidden));
  mu_head_ = register_module("mu", nn::Linear(2 * hidden, kLatentDim));
  logvar_head_ = register_module("logvar", nn::Linear(2 * hidden, kLatentDim));
}

LatentDistribution ProjectionImpl::forward(torch::Tensor x) {
  if (x.dim() != 3 || x.size(2) != input_dim_) {
    throw InvalidArgument("projection input has wrong feature size");
  }
  auto h = std::get<0>(gru_->forward(x));
  h = torch::relu(dense_->forward(h));
  const double lo = 2.0 * std::log(kSigmaMin);
  const double hi = 2.0 * std::log(kSigmaMax);
  auto logvar = logvar_head_->forward(h).clamp(lo, hi);
  return {mu_head_->forward(h), torch::exp(0.5 * logvar)};
}

torch::Tensor reparam_sample(const LatentDistribution& d, at::Generator& gen) {
  auto eps = torch::randn(d.mu.sizes(), gen, d.mu.options().requires_grad(false));
  return d.mu + d.sigma * eps;
}

SpeechDecoderImpl::SpeechDecoderImpl() {
  speaker_fc_ = register_module("speaker_fc", nn::Linear(kSpeakerDim, kLatentDim));
  lstm_ = register_module(
      "lstm",
      nn::LSTM(nn::LSTMOptions(kLatentDim * 2, 256).batch_first(true).bidirectional(true)));
  dense_ = nn::Sequential(nn::Linear(512, 512), nn::ReLU(), nn::Linear(512, 512), nn::ReLU(),
                          nn::Linear(512, 256), nn::ReLU(), nn::Linear(256, kMelBands),
                          nn::Sigmoid());
  register_module("dense", dense_);
}

torch::Tensor SpeechDecoderImpl::forward(torch::Tensor z, torch::Tensor v) {
  if (z.dim() != 3 || z.size(2) != kLatentDim) {
    throw InvalidArgument("decoder latent must be (B, steps, 256)");
  }
  if (v.dim() != 2 || v.size(1) != kSpeakerDim || v.size(0) != z.size(0)) {
    throw InvalidArgument("decoder speaker embedding must be (B, 256)");
  }
  auto s = torch::relu(speaker_fc_->forward(v));
  s = s.unsqueeze(1).expand({z.size(0), z.size(1), kLatentDim});
  auto h = std::get<0>(lstm_->forward(torch::cat({z, s}, 2)));
  return dense_->forward(h);
}

CriticImpl::CriticImpl() {
  const std::vector<int64_t> channels{kMelBands, 128, 128, 256, 256, 512, 512};
  convs_ = nn::Sequential();
  for (size_t i = 0; i + 1 < channels.size(); ++i) {
    const int64_t stride = i % 2 == 1 ? 2 : 1;
    convs_->push_back(
        nn::Conv1d(nn::Conv1dOptions(channels[i], channels[i + 1], 5).stride(stride).padding(2)));
    convs_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  }
  register_module("convs", convs_);
  out_ = register_module("out", nn::Linear(512, 1));
}

torch::Tensor CriticImpl::forward(torch::Tensor mel) {
  if (mel.dim() != 3 || mel.size(2) != kMelBands) {
    throw InvalidArgument("critic expects (B, steps, 80)");
  }
  auto h = convs_->forward(mel.transpose(1, 2));
  return out_->forward(h.mean(2)).squeeze(1);
}

GeneratorImpl::GeneratorImpl() {
  visual = register_module("visual", VisualEncoder());
  lip_proj = register_module("lip_proj", Projection(kVisualDim));
  content_proj = register_module("content_proj", Projection(kContentDim));
  decoder = register_module("decoder", SpeechDecoder());
}

LatentDistribution GeneratorImpl::lip_distribution(const torch::Tensor& video) {
  return lip_proj->forward(temporal_upsample(visual->forward(video)));
}

LatentDistribution GeneratorImpl::content_distribution(const torch::Tensor& content) {
  return content_proj->forward(content);
}

uint64_t parameter_checksum(const torch::nn::Module& module) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const torch::Tensor& t) {
    auto c = t.detach().contiguous().cpu();
    const auto* p = static_cast<const uint8_t*>(c.data_ptr());
    for (size_t i = 0, n = c.nbytes(); i < n; ++i) {
      h = (h ^ p[i]) * 1099511628211ull;
    }
  };
  for (const auto& p : module.named_parameters()) mix(p.value());
  for (const auto& b : module.named_buffers()) mix(b.value());
  return h;
}

}  // namespace lipvox::model
