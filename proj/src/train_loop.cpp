#include "lipvox/train_loop.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "lipvox/checkpoint.hpp"
#include "lipvox/error.hpp"

namespace lipvox::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kGeneratorPrefix = "generator";
constexpr const char* kCriticPrefix = "critic";

model::Generator make_generator(uint64_t seed) {
  torch::manual_seed(derive_seed(seed, 4, 0));
  return model::Generator();
}

model::Critic make_critic(uint64_t seed) {
  torch::manual_seed(derive_seed(seed, 4, 1));
  return model::Critic();
}

torch::optim::RMSpropOptions rmsprop_options(const TrainConfig& c) {
  return torch::optim::RMSpropOptions(c.learning_rate).alpha(c.rmsprop_alpha).eps(c.rmsprop_eps);
}

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.set_requires_grad(on);
}

void warn_default(const TrainHooks& hooks, const std::string& msg) {
  if (hooks.warn) {
    hooks.warn(msg);
  } else {
    std::cerr << "warning: " << msg << "\n";
  }
}

void put_optimizer(ckpt::Container& c, json& steps, const std::string& name,
                   torch::optim::RMSprop& opt) {
  json list = json::array();
  const auto& params = opt.param_groups().at(0).params();
  for (size_t i = 0; i < params.size(); ++i) {
    auto it = opt.state().find(params[i].unsafeGetTensorImpl());
    if (it == opt.state().end()) {
      list.push_back(0);
      continue;
    }
    auto& st = static_cast<torch::optim::RMSpropParamState&>(*it->second);
    list.push_back(st.step());
    c.put("optim." + name + "." + std::to_string(i) + ".square_avg", st.square_avg());
  }
  steps[name] = list;
}

void get_optimizer(const ckpt::Container& c, const json& steps, const std::string& name,
                   torch::optim::RMSprop& opt) {
  const auto& params = opt.param_groups().at(0).params();
  const json& list = steps.at(name);
  if (list.size() != params.size()) throw CorruptData("optimizer state size mismatch for " + name);
  opt.state().clear();
  for (size_t i = 0; i < params.size(); ++i) {
    const auto* sq = c.find("optim." + name + "." + std::to_string(i) + ".square_avg");
    if (sq == nullptr) continue;
    if (sq->sizes() != params[i].sizes()) throw CorruptData("optimizer state shape mismatch");
    auto st = std::make_unique<torch::optim::RMSpropParamState>();
    st->step(list[i].get<int64_t>());
    st->square_avg(sq->clone());
    opt.state()[params[i].unsafeGetTensorImpl()] = std::move(st);
  }
}

json breakdown_json(const loss::LossBreakdown& b) {
  return {{"l_r", b.l_r},           {"l_kl_global", b.l_kl_global}, {"l_kl_local", b.l_kl_local},
          {"l_voice", b.l_voice},   {"l_adv_gen", b.l_adv_gen},     {"l_adv_critic", b.l_adv_critic},
          {"l_gp", b.l_gp},         {"total_gen", b.total_gen}};
}

loss::LossBreakdown breakdown_from(const json& j) {
  loss::LossBreakdown b;
  b.l_r = j.at("l_r");
  b.l_kl_global = j.at("l_kl_global");
  b.l_kl_local = j.at("l_kl_local");
  b.l_voice = j.at("l_voice");
  b.l_adv_gen = j.at("l_adv_gen");
  b.l_adv_critic = j.at("l_adv_critic");
  b.l_gp = j.at("l_gp");
  b.total_gen = j.at("total_gen");
  return b;
}

EpochRecord record_from(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch");
  r.gen_steps = j.at("gen_steps");
  r.losses = breakdown_from(j);
  r.l_align = j.at("l_align");
  r.critic_objective = j.at("critic_objective");
  return r;
}

// Decoder input source for the generator update numbered gen_steps + 1.
bool decode_from_lip(const TrainState& s) {
  switch (s.config.sampling_source) {
    case SamplingSource::kContent: return false;
    case SamplingSource::kLip: return true;
    case SamplingSource::kAlternate: return (s.gen_steps + 1) % 2 == 0;
  }
  return false;
}

model::LatentDistribution ae_collapse(const model::LatentDistribution& d) {
  return {d.mu, torch::full_like(d.mu, model::kSigmaMin)};
}

double kl_ramp(const TrainState& s) {
  const int64_t n = s.config.kl_warmup_steps;
  return n <= 0 ? 1.0 : std::min(1.0, static_cast<double>(s.gen_steps + 1) / static_cast<double>(n));
}

torch::Tensor draw(TrainState& s, const model::LatentDistribution& d) {
  return s.config.variational ? model::reparam_sample(d, s.torch_rng) : d.mu;
}

void write_metrics(const TrainState& s, const fs::path& out_dir) {
  std::ofstream f(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!f) throw IoError("cannot write metrics log in " + out_dir.string());
  for (const auto& r : s.history) f << to_json(r).dump() << "\n";
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw InvalidArgument("learning_rate must be > 0");
  if (critic_iters_per_gen < 0) throw InvalidArgument("critic_iters_per_gen must be >= 0");
  if (patience_epochs < 1) throw InvalidArgument("patience_epochs must be >= 1");
  if (max_epochs < 0) throw InvalidArgument("max_epochs must be >= 0");
  if (!(rmsprop_alpha > 0 && rmsprop_alpha < 1)) throw InvalidArgument("rmsprop_alpha must be in (0, 1)");
  if (!(rmsprop_eps > 0)) throw InvalidArgument("rmsprop_eps must be > 0");
  if (min_improvement < 0) throw InvalidArgument("min_improvement must be >= 0");
  if (kl_warmup_steps < 0) throw InvalidArgument("kl_warmup_steps must be >= 0");
  weights.validate();
}

std::string to_string(SamplingSource s) {
  switch (s) {
    case SamplingSource::kContent: return "content";
    case SamplingSource::kLip: return "lip";
    case SamplingSource::kAlternate: return "alternate";
  }
  return "content";
}

SamplingSource sampling_source_from(const std::string& s) {
  if (s == "content") return SamplingSource::kContent;
  if (s == "lip") return SamplingSource::kLip;
  if (s == "alternate") return SamplingSource::kAlternate;
  throw InvalidArgument("sampling_source must be content, lip or alternate (got '" + s + "')");
}

std::string to_string(model::CropMode c) {
  return c == model::CropMode::kFullFace ? "full_face" : "lower_half";
}

model::CropMode crop_mode_from(const std::string& s) {
  if (s == "full_face") return model::CropMode::kFullFace;
  if (s == "lower_half") return model::CropMode::kLowerHalf;
  throw InvalidArgument("crop_mode must be full_face or lower_half (got '" + s + "')");
}

json to_json(const TrainConfig& c) {
  const auto& w = c.weights;
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"critic_iters_per_gen", c.critic_iters_per_gen},
          {"sampling_source", to_string(c.sampling_source)},
          {"variational", c.variational},
          {"crop_mode", to_string(c.crop_mode)},
          {"lambda_r", w.lambda_r},
          {"lambda_k_global", w.lambda_k_global},
          {"lambda_k_local", w.lambda_k_local},
          {"lambda_voice", w.lambda_voice},
          {"lambda_gp", w.lambda_gp},
          {"lambda_adv", w.lambda_adv},
          {"patience_epochs", c.patience_epochs},
          {"min_improvement", c.min_improvement},
          {"max_epochs", c.max_epochs},
          {"max_gen_steps", c.max_gen_steps},
          {"rmsprop_alpha", c.rmsprop_alpha},
          {"rmsprop_eps", c.rmsprop_eps},
          {"kl_content_first", c.kl_content_first},
          {"kl_warmup_steps", c.kl_warmup_steps},
          {"keep_epoch_checkpoints", c.keep_epoch_checkpoints},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size");
  c.learning_rate = j.at("learning_rate");
  c.critic_iters_per_gen = j.at("critic_iters_per_gen");
  c.sampling_source = sampling_source_from(j.at("sampling_source"));
  c.variational = j.at("variational");
  c.crop_mode = crop_mode_from(j.at("crop_mode"));
  c.weights.lambda_r = j.at("lambda_r");
  c.weights.lambda_k_global = j.at("lambda_k_global");
  c.weights.lambda_k_local = j.at("lambda_k_local");
  c.weights.lambda_voice = j.at("lambda_voice");
  c.weights.lambda_gp = j.at("lambda_gp");
  c.weights.lambda_adv = j.at("lambda_adv");
  c.patience_epochs = j.at("patience_epochs");
  c.min_improvement = j.at("min_improvement");
  c.max_epochs = j.at("max_epochs");
  c.max_gen_steps = j.at("max_gen_steps");
  c.rmsprop_alpha = j.at("rmsprop_alpha");
  c.rmsprop_eps = j.at("rmsprop_eps");
  c.kl_content_first = j.at("kl_content_first");
  c.kl_warmup_steps = j.value("kl_warmup_steps", int64_t{0});
  c.keep_epoch_checkpoints = j.at("keep_epoch_checkpoints");
  c.seed = j.at("seed");
  return c;
}

json to_json(const EpochRecord& r) {
  json j = {{"epoch", r.epoch}, {"gen_steps", r.gen_steps}};
  j.update(breakdown_json(r.losses));
  j["l_align"] = r.l_align;
  j["critic_objective"] = r.critic_objective;
  j["wasserstein"] = -r.losses.l_adv_critic;
  return j;
}

TrainState::TrainState(const TrainConfig& cfg, embed::Surrogates frozen)
    : config(cfg),
      generator(make_generator(cfg.seed)),
      critic(make_critic(cfg.seed)),
      surrogates(std::move(frozen)),
      gen_opt(generator->parameters(), rmsprop_options(cfg)),
      critic_opt(critic->parameters(), rmsprop_options(cfg)),
      torch_rng(at::make_generator<at::CPUGeneratorImpl>(derive_seed(cfg.seed, 2, 0))),
      rng(derive_seed(cfg.seed, 3, 0)) {
  config.validate();
  if (!surrogates.loaded()) throw NotLoaded("training needs pretrained surrogates");
}

void save_checkpoint(const TrainState& s, const fs::path& path) {
  ckpt::Container c;
  c.header["kind"] = "train";
  c.header["config"] = to_json(s.config);
  c.header["epoch"] = s.epoch;
  c.header["gen_steps"] = s.gen_steps;
  c.header["best_critic"] = s.best_critic;
  c.header["best_epoch"] = s.best_epoch;
  c.header["epochs_since_best"] = s.epochs_since_best;
  std::ostringstream rng_state;
  rng_state << s.rng;
  c.header["rng_state"] = rng_state.str();
  json history = json::array();
  for (const auto& r : s.history) history.push_back(to_json(r));
  c.header["history"] = history;

  ckpt::put_module(c, kGeneratorPrefix, *s.generator);
  ckpt::put_module(c, kCriticPrefix, *s.critic);
  embed::put_surrogates(c, s.surrogates);
  json steps;
  auto& self = const_cast<TrainState&>(s);
  put_optimizer(c, steps, "gen", self.gen_opt);
  put_optimizer(c, steps, "critic", self.critic_opt);
  c.header["optim_steps"] = steps;
  c.put("rng.torch", self.torch_rng.get_state());
  ckpt::write_container(path, std::move(c));
}

std::unique_ptr<TrainState> load_checkpoint(const fs::path& path,
                                            const std::optional<TrainConfig>& expected,
                                            std::vector<std::string>* warnings) {
  const auto c = ckpt::read_container(path);
  if (c.header.value("kind", "") != "train") {
    throw CorruptData(path.string() + " is not a training checkpoint");
  }
  TrainConfig config;
  try {
    config = train_config_from_json(c.header.at("config"));
  } catch (const json::exception& e) {
    throw CorruptData(std::string("checkpoint config: ") + e.what());
  }
  if (expected && to_json(*expected) != to_json(config) && warnings != nullptr) {
    warnings->push_back("checkpoint config differs from the requested one; using the stored config");
  }
  auto state = std::make_unique<TrainState>(config, embed::get_surrogates(c));
  ckpt::get_module(c, kGeneratorPrefix, *state->generator);
  ckpt::get_module(c, kCriticPrefix, *state->critic);
  try {
    get_optimizer(c, c.header.at("optim_steps"), "gen", state->gen_opt);
    get_optimizer(c, c.header.at("optim_steps"), "critic", state->critic_opt);
    state->epoch = c.header.at("epoch");
    state->gen_steps = c.header.at("gen_steps");
    state->best_critic = c.header.at("best_critic");
    state->best_epoch = c.header.at("best_epoch");
    state->epochs_since_best = c.header.at("epochs_since_best");
    std::istringstream rng_state(c.header.at("rng_state").get<std::string>());
    rng_state >> state->rng;
    if (!rng_state) throw CorruptData("bad rng state");
    for (const auto& r : c.header.at("history")) state->history.push_back(record_from(r));
  } catch (const json::exception& e) {
    throw CorruptData(std::string("checkpoint header: ") + e.what());
  }
  const auto* torch_state = c.find("rng.torch");
  if (torch_state == nullptr) throw CorruptData("checkpoint lacks generator rng state");
  state->torch_rng.set_state(*torch_state);
  return state;
}

torch::Tensor frames_tensor(const corpus::Frames& frames) {
  auto t = torch::from_blob(const_cast<uint8_t*>(frames.pixels.data()),
                            {1, frames.count, corpus::kFrameSize, corpus::kFrameSize,
                             corpus::kChannels},
                            torch::kUInt8);
  return t.clone();
}

BatchTensors to_tensors(const corpus::Batch& batch, model::CropMode crop) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  std::vector<torch::Tensor> frames, mels, refs;
  for (const auto& ex : batch) {
    frames.push_back(frames_tensor(ex.lips));
    mels.push_back(embed::mel_tensor(ex.mel));
    refs.push_back(embed::mel_tensor(ex.speaker_ref_mel));
  }
  return {model::frames_to_input(torch::cat(frames), crop), torch::stack(mels), torch::stack(refs)};
}

StepStats train_step(TrainState& s, const BatchTensors& batch) {
  const auto& w = s.config.weights;
  auto& gen = s.generator;
  gen->train();
  s.critic->train();

  const auto content = s.surrogates.content_encode(batch.mel);
  torch::Tensor v, v_gt;
  {
    torch::NoGradGuard guard;
    v = s.surrogates.speaker_embed(batch.speaker_ref);
    v_gt = s.surrogates.speaker_embed(batch.mel);
  }
  const bool use_lip = decode_from_lip(s);
  auto critic_fn = [&s](const torch::Tensor& x) { return s.critic->forward(x); };

  StepStats stats;
  double critic_sum = 0, adv_sum = 0, gp_sum = 0;
  if (s.config.critic_iters_per_gen > 0) {
    model::LatentDistribution source;
    {
      torch::NoGradGuard guard;
      source = use_lip ? gen->lip_distribution(batch.video) : gen->content_distribution(content);
    }
    set_requires_grad(*s.critic, true);
    for (int64_t k = 0; k < s.config.critic_iters_per_gen; ++k) {
      torch::Tensor fake;
      {
        torch::NoGradGuard guard;
        fake = gen->decoder->forward(draw(s, source), v);
      }
      auto terms = loss::wgan_losses(critic_fn, batch.mel, fake, s.torch_rng);
      auto objective = terms.critic + w.lambda_gp * terms.gp;
      const double value = objective.item<double>();
      if (!std::isfinite(value)) {
        throw NumericalError(std::isfinite(terms.gp.item<double>()) ? "non-finite loss term l_adv_critic"
                                                                    : "non-finite loss term l_gp");
      }
      s.critic_opt.zero_grad();
      objective.backward();
      s.critic_opt.step();
      critic_sum += value;
      adv_sum += terms.critic.item<double>();
      gp_sum += terms.gp.item<double>();
    }
    const double n = static_cast<double>(s.config.critic_iters_per_gen);
    stats.critic_objective = critic_sum / n;
    stats.losses.l_adv_critic = adv_sum / n;
    stats.losses.l_gp = gp_sum / n;
  }

  set_requires_grad(*s.critic, false);
  auto dc = gen->content_distribution(content);
  auto dl = gen->lip_distribution(batch.video);
  if (!s.config.variational) {
    dc = ae_collapse(dc);
    dl = ae_collapse(dl);
  }
  auto out = gen->decoder->forward(draw(s, use_lip ? dl : dc), v);
  auto l_r = loss::recon_l1(out, batch.mel);
  auto zero = torch::zeros({}, out.options());
  torch::Tensor kl_g = zero, kl_l = zero, align = zero;
  if (s.config.variational) {
    const auto& p = s.config.kl_content_first ? dc : dl;
    const auto& q = s.config.kl_content_first ? dl : dc;
    kl_g = loss::kl_global(p, q);
    kl_l = loss::kl_local(p, q, s.rng);
  } else {
    align = loss::latent_alignment(dc, dl);
  }
  auto voice = loss::voice_loss(s.surrogates, out, v_gt, &s.rng);
  auto adv = -s.critic->forward(out).mean();
  const double ramp = kl_ramp(s);
  auto total = w.lambda_r * l_r + ramp * (w.lambda_k_global * (kl_g + align) + w.lambda_k_local * kl_l) +
               w.lambda_voice * voice + w.lambda_adv * adv;

  auto& b = stats.losses;
  b.l_r = l_r.item<double>();
  b.l_kl_global = kl_g.item<double>();
  b.l_kl_local = kl_l.item<double>();
  b.l_voice = voice.item<double>();
  b.l_adv_gen = adv.item<double>();
  b.total_gen = total.item<double>();
  stats.l_align = align.item<double>();
  loss::check_finite(b);
  if (!std::isfinite(stats.l_align)) throw NumericalError("non-finite loss term l_align");

  s.gen_opt.zero_grad();
  total.backward();
  s.gen_opt.step();
  set_requires_grad(*s.critic, true);
  ++s.gen_steps;
  return stats;
}

TrainResult run_epochs(std::unique_ptr<TrainState> state, const corpus::CorpusData& data,
                       const fs::path& out_dir, const TrainHooks& hooks) {
  auto& s = *state;
  if (data.utterances.empty()) throw InvalidArgument("training corpus is empty");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  corpus::BatchIterator batches(data, static_cast<int>(s.config.batch_size),
                                derive_seed(s.config.seed, 1, 0));
  if (batches.batches_per_epoch() == 0) {
    throw InvalidArgument("corpus has fewer utterances than one batch");
  }

  TrainResult result;
  result.last_checkpoint = out_dir / "last.ckpt";
  result.best_checkpoint = out_dir / "best.ckpt";
  auto budget_left = [&s] { return s.config.max_gen_steps < 0 || s.gen_steps < s.config.max_gen_steps; };

  while (s.epoch < s.config.max_epochs && budget_left()) {
    EpochRecord rec;
    int64_t steps = 0;
    for (const auto& batch : batches.epoch(s.epoch)) {
      if (!budget_left()) break;
      const auto st = train_step(s, to_tensors(batch, s.config.crop_mode));
      auto& m = rec.losses;
      m.l_r += st.losses.l_r;
      m.l_kl_global += st.losses.l_kl_global;
      m.l_kl_local += st.losses.l_kl_local;
      m.l_voice += st.losses.l_voice;
      m.l_adv_gen += st.losses.l_adv_gen;
      m.l_adv_critic += st.losses.l_adv_critic;
      m.l_gp += st.losses.l_gp;
      m.total_gen += st.losses.total_gen;
      rec.l_align += st.l_align;
      rec.critic_objective += st.critic_objective;
      ++steps;
    }
    const double n = static_cast<double>(steps);
    for (double* v : {&rec.losses.l_r, &rec.losses.l_kl_global, &rec.losses.l_kl_local,
                      &rec.losses.l_voice, &rec.losses.l_adv_gen, &rec.losses.l_adv_critic,
                      &rec.losses.l_gp, &rec.losses.total_gen, &rec.l_align, &rec.critic_objective}) {
      *v /= n;
    }
    if (hooks.critic_objective) rec.critic_objective = hooks.critic_objective(s.epoch, rec.critic_objective);
    if (!std::isfinite(rec.critic_objective)) throw NumericalError("non-finite epoch critic objective");

    rec.epoch = s.epoch;
    rec.gen_steps = s.gen_steps;
    const bool improved = s.best_epoch < 0 || rec.critic_objective < s.best_critic - s.config.min_improvement;
    if (improved) {
      s.best_critic = rec.critic_objective;
      s.best_epoch = s.epoch;
      s.epochs_since_best = 0;
    } else {
      ++s.epochs_since_best;
    }
    ++s.epoch;
    s.history.push_back(rec);

    save_checkpoint(s, result.last_checkpoint);
    if (improved) save_checkpoint(s, result.best_checkpoint);
    if (s.config.keep_epoch_checkpoints) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03lld.ckpt", static_cast<long long>(rec.epoch));
      save_checkpoint(s, out_dir / name);
    }
    write_metrics(s, out_dir);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (s.epochs_since_best >= s.config.patience_epochs) {
      result.stopped_early = true;
      break;
    }
  }
  if (!fs::exists(result.last_checkpoint) || s.history.empty()) {
    save_checkpoint(s, result.last_checkpoint);
    write_metrics(s, out_dir);
  }
  if (!fs::exists(result.best_checkpoint)) save_checkpoint(s, result.best_checkpoint);
  result.state = std::move(state);
  return result;
}

TrainResult train(const corpus::CorpusData& data, const embed::Surrogates& surrogates,
                  const TrainConfig& config, const fs::path& out_dir, const TrainHooks& hooks) {
  return run_epochs(std::make_unique<TrainState>(config, surrogates), data, out_dir, hooks);
}

TrainResult finetune(const fs::path& base, const corpus::CorpusData& data, const TrainConfig& config,
                     const fs::path& out_dir, const TrainHooks& hooks) {
  const auto base_state = load_checkpoint(base);
  std::set<std::string> speakers;
  for (const auto& u : data.utterances) speakers.insert(u.speaker_id);
  if (speakers.size() > 1) {
    warn_default(hooks, "fine-tuning manifest has " + std::to_string(speakers.size()) + " speakers");
  }
  auto state = std::make_unique<TrainState>(config, base_state->surrogates);
  {
    torch::NoGradGuard guard;
    ckpt::Container c;
    ckpt::put_module(c, kGeneratorPrefix, *base_state->generator);
    ckpt::put_module(c, kCriticPrefix, *base_state->critic);
    ckpt::get_module(c, kGeneratorPrefix, *state->generator);
    ckpt::get_module(c, kCriticPrefix, *state->critic);
  }
  return run_epochs(std::move(state), data, out_dir, hooks);
}

}  // namespace lipvox::train
