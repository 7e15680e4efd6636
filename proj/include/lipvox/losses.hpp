#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "lipvox/embedders.hpp"
#include "lipvox/model_core.hpp"
#include "lipvox/rng.hpp"

namespace lipvox::loss {

using model::LatentDistribution;

struct LossWeights {
  double lambda_r = 10;
  double lambda_k_global = 5;
  double lambda_k_local = 5;
  double lambda_voice = 5;
  double lambda_gp = 10;
  double lambda_adv = 1;

  void validate() const;
};

struct LossBreakdown {
  double l_r = 0;
  double l_kl_global = 0;
  double l_kl_local = 0;
  double l_voice = 0;
  double l_adv_gen = 0;
  double l_adv_critic = 0;
  double l_gp = 0;
  double total_gen = 0;
};

// Per-sample KL(p || q) of diagonal Gaussians: sum over dims, mean over
// steps. Shapes (B, steps, d) -> (B).
torch::Tensor kl_gaussian_per_sample(const LatentDistribution& p, const LatentDistribution& q);
// Batch mean of the above.
torch::Tensor kl_gaussian(const LatentDistribution& p, const LatentDistribution& q);

// KL[content || lip] over the whole sequence.
torch::Tensor kl_global(const LatentDistribution& content, const LatentDistribution& lip);

struct Segment {
  int64_t sample = 0;
  int64_t start = 0;
  int64_t length = 0;
};

inline constexpr int kLocalSegments = 10;
inline constexpr int64_t kMinSegment = 5;
inline constexpr int64_t kMaxSegment = 20;

// R segments per sample, length uniform in [min_len, max_len] (capped at
// the sequence length) and start uniform over the valid range.
std::vector<Segment> draw_segments(int64_t batch, int64_t steps, Rng& rng,
                                   int count = kLocalSegments, int64_t min_len = kMinSegment,
                                   int64_t max_len = kMaxSegment);

// Mean over the given segments of KL on the sliced distributions.
torch::Tensor kl_local(const LatentDistribution& content, const LatentDistribution& lip,
                       const std::vector<Segment>& segments);
torch::Tensor kl_local(const LatentDistribution& content, const LatentDistribution& lip, Rng& rng);

// Squared latent distance used in place of KL when the variational path is
// off: half the squared mean difference, summed over dims, mean over steps.
torch::Tensor latent_alignment(const LatentDistribution& content, const LatentDistribution& lip);

torch::Tensor recon_l1(const torch::Tensor& generated, const torch::Tensor& target);

using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;

struct WganTerms {
  torch::Tensor critic;  // mean D(fake) - mean D(real)
  torch::Tensor gen;     // -mean D(fake)
  torch::Tensor gp;      // mean (||grad D(x_hat)|| - 1)^2
};

// Interpolates x_hat = eps * real + (1 - eps) * fake, one eps per sample.
torch::Tensor interpolate(const torch::Tensor& real, const torch::Tensor& fake, at::Generator& gen);
// Gradient penalty at given interpolates; keeps the graph for a backward
// pass into the critic parameters.
torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& x_hat);

WganTerms wgan_losses(const CriticFn& critic, const torch::Tensor& real, const torch::Tensor& fake,
                      at::Generator& gen);

// 1 - cos(speaker_embed(generated), target). Windows longer than 100 steps
// embed a random aligned 100-step slice drawn from rng.
torch::Tensor voice_loss(const embed::Surrogates& surrogates, const torch::Tensor& generated,
                         const torch::Tensor& target_embedding, Rng* rng = nullptr);

double total_generator_loss(const LossBreakdown& parts, const LossWeights& w);

// Throws NumericalError naming the first non-finite term.
void check_finite(const LossBreakdown& parts);

}  // namespace lipvox::loss
