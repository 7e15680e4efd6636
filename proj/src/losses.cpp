#include "lipvox/losses.hpp"

#include <cmath>
#include <string>

#include "lipvox/error.hpp"

namespace lipvox::loss {

namespace {

void require_same_shape(const LatentDistribution& p, const LatentDistribution& q) {
  if (p.mu.sizes() != q.mu.sizes() || p.sigma.sizes() != q.sigma.sizes() ||
      p.mu.sizes() != p.sigma.sizes()) {
    throw InvalidArgument("latent distributions have mismatched shapes");
  }
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {lambda_r, lambda_k_global, lambda_k_local, lambda_voice, lambda_gp, lambda_adv}) {
    if (!(w >= 0) || !std::isfinite(w)) throw InvalidArgument("loss weights must be finite and >= 0");
  }
}

torch::Tensor kl_gaussian_per_sample(const LatentDistribution& p, const LatentDistribution& q) {
  require_same_shape(p, q);
  auto var_p = p.sigma.square();
  auto var_q = q.sigma.square();
  auto cell = torch::log(q.sigma / p.sigma) + (var_p + (p.mu - q.mu).square()) / (2.0 * var_q) - 0.5;
  return cell.sum(-1).mean(-1);
}

torch::Tensor kl_gaussian(const LatentDistribution& p, const LatentDistribution& q) {
  return kl_gaussian_per_sample(p, q).mean();
}

torch::Tensor kl_global(const LatentDistribution& content, const LatentDistribution& lip) {
  return kl_gaussian(content, lip);
}

std::vector<Segment> draw_segments(int64_t batch, int64_t steps, Rng& rng, int count,
                                   int64_t min_len, int64_t max_len) {
  if (count < 1 || min_len < 1 || max_len < min_len) {
    throw InvalidArgument("invalid segment parameters");
  }
  if (steps < min_len) throw InvalidArgument("sequence shorter than the minimum segment");
  const int64_t hi = std::min(max_len, steps);
  std::vector<Segment> out;
  out.reserve(static_cast<size_t>(batch * count));
  for (int64_t b = 0; b < batch; ++b) {
    for (int r = 0; r < count; ++r) {
      const int64_t len = uniform_int(rng, min_len, hi);
      const int64_t start = uniform_int(rng, 0, steps - len);
      out.push_back({b, start, len});
    }
  }
  return out;
}

torch::Tensor kl_local(const LatentDistribution& content, const LatentDistribution& lip,
                       const std::vector<Segment>& segments) {
  require_same_shape(content, lip);
  if (segments.empty()) throw InvalidArgument("no segments given");
  std::vector<torch::Tensor> terms;
  terms.reserve(segments.size());
  for (const auto& s : segments) {
    if (s.sample < 0 || s.sample >= content.mu.size(0) || s.start < 0 || s.length < 1 ||
        s.start + s.length > content.steps()) {
      throw InvalidArgument("segment out of range");
    }
    auto pick = [&s](const LatentDistribution& d) {
      return LatentDistribution{d.mu.narrow(0, s.sample, 1).narrow(1, s.start, s.length),
                                d.sigma.narrow(0, s.sample, 1).narrow(1, s.start, s.length)};
    };
    terms.push_back(kl_gaussian_per_sample(pick(content), pick(lip)).squeeze(0));
  }
  return torch::stack(terms).mean();
}

torch::Tensor kl_local(const LatentDistribution& content, const LatentDistribution& lip, Rng& rng) {
  require_same_shape(content, lip);
  return kl_local(content, lip, draw_segments(content.mu.size(0), content.steps(), rng));
}

torch::Tensor latent_alignment(const LatentDistribution& content, const LatentDistribution& lip) {
  require_same_shape(content, lip);
  return (0.5 * (content.mu - lip.mu).square()).sum(-1).mean();
}

torch::Tensor recon_l1(const torch::Tensor& generated, const torch::Tensor& target) {
  if (generated.sizes() != target.sizes()) throw InvalidArgument("recon_l1 shape mismatch");
  return (generated - target).abs().mean();
}

torch::Tensor interpolate(const torch::Tensor& real, const torch::Tensor& fake, at::Generator& gen) {
  if (real.sizes() != fake.sizes()) throw InvalidArgument("real and fake batches differ in shape");
  std::vector<int64_t> shape(static_cast<size_t>(real.dim()), 1);
  shape[0] = real.size(0);
  auto eps = torch::rand(shape, gen, real.options().requires_grad(false));
  return (eps * real.detach() + (1 - eps) * fake.detach());
}

torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& x_hat_in) {
  auto x_hat = x_hat_in.detach().requires_grad_(true);
  auto score = critic(x_hat);
  torch::Tensor grad;
  if (score.requires_grad()) {
    grad = torch::autograd::grad({score.sum()}, {x_hat}, {}, /*retain_graph=*/true,
                                 /*create_graph=*/true, /*allow_unused=*/true)[0];
  }
  if (!grad.defined()) grad = torch::zeros_like(x_hat);
  auto norm = grad.reshape({grad.size(0), -1}).norm(2, 1);
  return (norm - 1).square().mean();
}

WganTerms wgan_losses(const CriticFn& critic, const torch::Tensor& real, const torch::Tensor& fake,
                      at::Generator& gen) {
  auto d_real = critic(real);
  auto d_fake = critic(fake);
  if (!torch::isfinite(d_real).all().item<bool>() || !torch::isfinite(d_fake).all().item<bool>()) {
    throw NumericalError("critic produced non-finite scores");
  }
  WganTerms t;
  t.critic = d_fake.mean() - d_real.mean();
  t.gen = -d_fake.mean();
  t.gp = gradient_penalty(critic, interpolate(real, fake, gen));
  return t;
}

torch::Tensor voice_loss(const embed::Surrogates& surrogates, const torch::Tensor& generated,
                         const torch::Tensor& target_embedding, Rng* rng) {
  auto mel = generated;
  const int64_t steps = generated.size(1);
  if (steps > embed::kSpeakerSteps + embed::kSpeakerStepTolerance) {
    const int64_t start = rng ? uniform_int(*rng, 0, steps - embed::kSpeakerSteps) : 0;
    mel = generated.narrow(1, start, embed::kSpeakerSteps);
  }
  auto v_gen = surrogates.speaker_embed(mel);
  return (1 - embed::voice_similarity(v_gen, target_embedding)).mean();
}

double total_generator_loss(const LossBreakdown& parts, const LossWeights& w) {
  for (double v : {parts.l_r, parts.l_kl_global, parts.l_kl_local, parts.l_voice, parts.l_adv_gen}) {
    if (!std::isfinite(v)) throw NumericalError("non-finite generator loss part");
  }
  return w.lambda_r * parts.l_r + w.lambda_k_global * parts.l_kl_global +
         w.lambda_k_local * parts.l_kl_local + w.lambda_voice * parts.l_voice +
         w.lambda_adv * parts.l_adv_gen;
}

void check_finite(const LossBreakdown& parts) {
  const std::pair<const char*, double> terms[] = {
      {"l_r", parts.l_r},           {"l_kl_global", parts.l_kl_global},
      {"l_kl_local", parts.l_kl_local}, {"l_voice", parts.l_voice},
      {"l_adv_gen", parts.l_adv_gen},   {"l_adv_critic", parts.l_adv_critic},
      {"l_gp", parts.l_gp},         {"total_gen", parts.total_gen}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericalError(std::string("non-finite loss term ") + name);
    }
  }
}

}  // namespace lipvox::loss
