#include "lipvox/embedders.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "lipvox/checkpoint.hpp"
#include "lipvox/error.hpp"
#include "lipvox/model_core.hpp"
#include "lipvox/rng.hpp"

namespace lipvox::embed {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

constexpr const char* kContentPrefix = "surrogate.content";
constexpr const char* kSpeakerPrefix = "surrogate.speaker";

nn::Conv1d conv(int64_t in, int64_t out, int64_t k) {
  return nn::Conv1d(nn::Conv1dOptions(in, out, k).padding(k / 2));
}

// Random 100-step slice of a random utterance, with per-step phoneme labels.
struct Draw {
  size_t utt;
  int64_t start;
};

Draw draw_window(const corpus::CorpusData& data, Rng& rng) {
  const size_t u = uniform_index(rng, data.utterances.size());
  const int64_t steps = data.utterances[u].mel.num_steps;
  const int64_t start = uniform_int(rng, 0, steps - kSpeakerSteps);
  return {u, start};
}

}  // namespace

ContentEncoderImpl::ContentEncoderImpl() {
  convs_ = nn::Sequential(conv(dsp::kMelBands, 256, 5), nn::GELU(), conv(256, 512, 5), nn::GELU(),
                          conv(512, kContentDim, 1), nn::GELU());
  register_module("convs", convs_);
  head_ = register_module("head", nn::Linear(kContentDim, corpus::kNumPhonemes));
}

torch::Tensor ContentEncoderImpl::forward(torch::Tensor mel) {
  if (mel.dim() != 3 || mel.size(2) != dsp::kMelBands) {
    throw InvalidArgument("content encoder expects (B, steps, 80)");
  }
  return convs_->forward(mel.transpose(1, 2)).transpose(1, 2);
}

torch::Tensor ContentEncoderImpl::logits(const torch::Tensor& features) {
  return head_->forward(features);
}

SpeakerEncoderImpl::SpeakerEncoderImpl() {
  convs_ = nn::Sequential(conv(dsp::kMelBands, 256, 5), nn::GELU(), conv(256, 256, 5), nn::GELU(),
                          conv(256, 256, 3), nn::GELU());
  register_module("convs", convs_);
  proj_ = register_module("proj", nn::Linear(256, kSpeakerDim));
}

torch::Tensor SpeakerEncoderImpl::forward(torch::Tensor mel) {
  if (mel.dim() != 3 || mel.size(2) != dsp::kMelBands) {
    throw InvalidArgument("speaker encoder expects (B, steps, 80)");
  }
  auto h = convs_->forward(mel.transpose(1, 2)).mean(2);
  return F::normalize(proj_->forward(h), F::NormalizeFuncOptions().dim(1).eps(1e-12));
}

Surrogates::Surrogates() : content(ContentEncoder()), speaker(SpeakerEncoder()) {}

void Surrogates::freeze() {
  for (nn::Module* m : {static_cast<nn::Module*>(content.get()),
                        static_cast<nn::Module*>(speaker.get())}) {
    m->eval();
    for (auto& p : m->parameters()) p.set_requires_grad(false);
  }
  loaded_ = true;
}

void Surrogates::require_loaded() const {
  if (!loaded_) throw NotLoaded("surrogate embedders are not loaded");
}

torch::Tensor Surrogates::content_encode(const torch::Tensor& mel) const {
  require_loaded();
  torch::NoGradGuard guard;
  if (mel.dim() == 2) return content.ptr()->forward(mel.unsqueeze(0)).squeeze(0);
  return content.ptr()->forward(mel);
}

torch::Tensor Surrogates::speaker_embed(const torch::Tensor& mel) const {
  require_loaded();
  if (mel.dim() != 3 || std::abs(mel.size(1) - kSpeakerSteps) > kSpeakerStepTolerance) {
    throw InvalidArgument("speaker embedding needs a (B, 100 +- 5, 80) mel");
  }
  return speaker.ptr()->forward(mel);
}

std::vector<float> Surrogates::content_encode(const dsp::MelSpectrogram& mel) const {
  auto out = content_encode(mel_tensor(mel)).contiguous();
  return {out.data_ptr<float>(), out.data_ptr<float>() + out.numel()};
}

std::vector<float> Surrogates::speaker_embed(const dsp::MelSpectrogram& mel) const {
  torch::NoGradGuard guard;
  auto out = speaker_embed(mel_tensor(mel).unsqueeze(0)).contiguous();
  return {out.data_ptr<float>(), out.data_ptr<float>() + out.numel()};
}

uint64_t Surrogates::checksum() const {
  nn::Module joint;
  joint.register_module("content", content.ptr());
  joint.register_module("speaker", speaker.ptr());
  return model::parameter_checksum(joint);
}

torch::Tensor mel_tensor(const dsp::MelSpectrogram& mel) {
  return torch::from_blob(const_cast<float*>(mel.values.data()), {mel.num_steps, dsp::kMelBands},
                          torch::kFloat32)
      .clone();
}

Surrogates pretrain_surrogates(const corpus::CorpusData& data, const SurrogateConfig& config,
                               const SurrogateProgress& progress) {
  std::map<std::string, int64_t> speaker_class;
  for (const auto& u : data.utterances) speaker_class.emplace(u.speaker_id, 0);
  if (speaker_class.size() < 2) {
    throw InvalidArgument("speaker surrogate needs at least two speakers");
  }
  int64_t next = 0;
  for (auto& [id, cls] : speaker_class) cls = next++;
  for (const auto& u : data.utterances) {
    if (u.mel.num_steps < kSpeakerSteps) throw InvalidArgument("utterance shorter than 1 s");
  }
  if (config.batch_size < 1 || config.learning_rate <= 0) {
    throw InvalidArgument("surrogate batch size and learning rate must be positive");
  }

  torch::manual_seed(config.seed);
  Surrogates s;
  Rng rng(derive_seed(config.seed, 0x5e, 0));

  auto gather = [&](std::vector<Draw>& draws) {
    draws.clear();
    for (int64_t b = 0; b < config.batch_size; ++b) draws.push_back(draw_window(data, rng));
    std::vector<torch::Tensor> mels;
    for (const auto& d : draws) {
      mels.push_back(mel_tensor(dsp::mel_segment(data.utterances[d.utt].mel, d.start, kSpeakerSteps)));
    }
    return torch::stack(mels);
  };

  std::vector<Draw> draws;
  {
    s.content->train();
    torch::optim::Adam opt(s.content->parameters(),
                           torch::optim::AdamOptions(config.learning_rate));
    for (int64_t step = 0; step < config.content_steps; ++step) {
      auto mel = gather(draws);
      auto labels = torch::empty({config.batch_size, kSpeakerSteps}, torch::kInt64);
      auto acc = labels.accessor<int64_t, 2>();
      for (int64_t b = 0; b < config.batch_size; ++b) {
        const auto& track = data.utterances[draws[b].utt].phoneme_track;
        for (int64_t t = 0; t < kSpeakerSteps; ++t) {
          const int64_t frame = (draws[b].start + t) / corpus::kStepsPerFrame;
          acc[b][t] = track[std::min<int64_t>(frame, static_cast<int64_t>(track.size()) - 1)];
        }
      }
      auto logits = s.content->logits(s.content->forward(mel));
      auto loss = F::cross_entropy(logits.reshape({-1, corpus::kNumPhonemes}), labels.reshape(-1));
      opt.zero_grad();
      loss.backward();
      opt.step();
      if (progress) progress("content", step, loss.item<double>());
    }
  }
  {
    s.speaker->train();
    auto classes = torch::randn({static_cast<int64_t>(speaker_class.size()), kSpeakerDim}) * 0.1;
    classes.set_requires_grad(true);
    std::vector<torch::Tensor> params = s.speaker->parameters();
    params.push_back(classes);
    torch::optim::Adam opt(params, torch::optim::AdamOptions(config.learning_rate));
    for (int64_t step = 0; step < config.speaker_steps; ++step) {
      auto mel = gather(draws);
      auto labels = torch::empty({config.batch_size}, torch::kInt64);
      for (int64_t b = 0; b < config.batch_size; ++b) {
        labels[b] = speaker_class.at(data.utterances[draws[b].utt].speaker_id);
      }
      auto emb = s.speaker->forward(mel);
      auto w = F::normalize(classes, F::NormalizeFuncOptions().dim(1));
      auto logits = config.cosine_scale * emb.matmul(w.t());
      auto loss = F::cross_entropy(logits, labels);
      opt.zero_grad();
      loss.backward();
      opt.step();
      if (progress) progress("speaker", step, loss.item<double>());
    }
  }
  s.freeze();
  return s;
}

void put_surrogates(ckpt::Container& c, const Surrogates& s) {
  if (!s.loaded()) throw NotLoaded("cannot store untrained surrogates");
  ckpt::put_module(c, kContentPrefix, *s.content);
  ckpt::put_module(c, kSpeakerPrefix, *s.speaker);
}

Surrogates get_surrogates(const ckpt::Container& c) {
  if (!ckpt::has_prefix(c, kContentPrefix) || !ckpt::has_prefix(c, kSpeakerPrefix)) {
    throw NotLoaded("file holds no surrogate parameters");
  }
  Surrogates s;
  ckpt::get_module(c, kContentPrefix, *s.content);
  ckpt::get_module(c, kSpeakerPrefix, *s.speaker);
  s.freeze();
  return s;
}

void save_surrogates(const Surrogates& s, const std::filesystem::path& path) {
  ckpt::Container c;
  c.header["kind"] = "surrogates";
  put_surrogates(c, s);
  ckpt::write_container(path, std::move(c));
}

Surrogates load_surrogates(const std::filesystem::path& path) {
  return get_surrogates(ckpt::read_container(path));
}

double voice_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw InvalidArgument("embedding sizes differ");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  return std::clamp(dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-8), -1.0, 1.0);
}

torch::Tensor voice_similarity(const torch::Tensor& a, const torch::Tensor& b) {
  auto denom = (a.norm(2, 1) * b.norm(2, 1)).clamp_min(1e-8);
  return (a * b).sum(1) / denom;
}

}  // namespace lipvox::embed
