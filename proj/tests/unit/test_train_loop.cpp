#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "lipvox/error.hpp"
#include "lipvox/train_loop.hpp"
#include "test_util.hpp"

using namespace lipvox;
using namespace lipvox::train;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 2;
  c.critic_iters_per_gen = 1;
  c.learning_rate = 1e-4;
  c.max_epochs = 2;
  c.seed = 3;
  return c;
}

const corpus::CorpusData& shared_corpus() {
  static const auto data = support::tiny_corpus(2, 1, 30);
  return data;
}

const embed::Surrogates& shared_surrogates() {
  static const auto s = support::random_surrogates(5);
  return s;
}

BatchTensors probe_batch(model::CropMode crop = model::CropMode::kFullFace) {
  Rng rng(1);
  corpus::Batch b;
  for (const auto& u : shared_corpus().utterances) b.push_back(corpus::sample_window(u, rng));
  return to_tensors(b, crop);
}

bool all_zero_or_undefined(torch::nn::Module& m) {
  for (const auto& p : m.parameters()) {
    if (p.grad().defined() && p.grad().abs().sum().item<double>() != 0.0) return false;
  }
  return true;
}

// Parameters only; BatchNorm running statistics move in any training forward.
std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

bool same(const std::vector<torch::Tensor>& a, torch::nn::Module& m) {
  const auto params = m.parameters();
  for (size_t i = 0; i < a.size(); ++i) {
    if (!torch::equal(a[i], params[i])) return false;
  }
  return true;
}

}  // namespace

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = small_config();
  c.sampling_source = SamplingSource::kAlternate;
  c.crop_mode = model::CropMode::kLowerHalf;
  c.variational = false;
  c.weights.lambda_voice = 2.5;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  EXPECT_THROW(sampling_source_from("video"), InvalidArgument);
  EXPECT_THROW(crop_mode_from("upper"), InvalidArgument);
}

TEST(TrainStep, BatchTensorShapes) {
  const auto b = probe_batch();
  EXPECT_EQ(b.video.sizes(), (std::vector<int64_t>{2, 3, 25, 96, 96}));
  EXPECT_EQ(b.mel.sizes(), (std::vector<int64_t>{2, 100, 80}));
  EXPECT_EQ(b.speaker_ref.sizes(), (std::vector<int64_t>{2, 100, 80}));
}

TEST(TrainStep, ContentSourceKeepsDecoderGradientAwayFromLipPath) {
  auto cfg = small_config();
  cfg.weights.lambda_k_global = 0;
  cfg.weights.lambda_k_local = 0;
  TrainState s(cfg, shared_surrogates());
  train_step(s, probe_batch());
  EXPECT_TRUE(all_zero_or_undefined(*s.generator->lip_proj));
  EXPECT_TRUE(all_zero_or_undefined(*s.generator->visual));
  EXPECT_FALSE(all_zero_or_undefined(*s.generator->content_proj));

  // With KL on, the lip path is trained by the KL terms alone.
  TrainState k(small_config(), shared_surrogates());
  train_step(k, probe_batch());
  EXPECT_FALSE(all_zero_or_undefined(*k.generator->lip_proj));
}

TEST(TrainStep, AlternateSwitchesSourceEachStep) {
  auto cfg = small_config();
  cfg.sampling_source = SamplingSource::kAlternate;
  cfg.weights.lambda_k_global = 0;
  cfg.weights.lambda_k_local = 0;
  TrainState s(cfg, shared_surrogates());
  const auto b = probe_batch();
  train_step(s, b);  // step 1: content
  EXPECT_TRUE(all_zero_or_undefined(*s.generator->lip_proj));
  EXPECT_FALSE(all_zero_or_undefined(*s.generator->content_proj));
  train_step(s, b);  // step 2: lip
  EXPECT_FALSE(all_zero_or_undefined(*s.generator->lip_proj));
  EXPECT_TRUE(all_zero_or_undefined(*s.generator->content_proj));
}

TEST(TrainStep, CriticAndGeneratorUpdatesAreSeparate) {
  const auto b = probe_batch();
  {
    auto cfg = small_config();
    cfg.critic_iters_per_gen = 0;
    TrainState s(cfg, shared_surrogates());
    train_step(s, b);
    for (const auto& p : s.critic->parameters()) EXPECT_FALSE(p.grad().defined());
    for (const auto& p : s.critic->parameters()) EXPECT_TRUE(p.requires_grad());
  }
  {
    TrainState s(small_config(), shared_surrogates());
    const auto gen_before = snapshot(*s.generator);
    const auto critic_before = snapshot(*s.critic);
    for (auto& g : s.gen_opt.param_groups()) g.options().set_lr(0.0);
    train_step(s, b);
    EXPECT_TRUE(same(gen_before, *s.generator));
    EXPECT_FALSE(same(critic_before, *s.critic));
  }
  {
    TrainState s(small_config(), shared_surrogates());
    const auto gen_before = snapshot(*s.generator);
    const auto critic_before = snapshot(*s.critic);
    for (auto& g : s.critic_opt.param_groups()) g.options().set_lr(0.0);
    train_step(s, b);
    EXPECT_FALSE(same(gen_before, *s.generator));
    EXPECT_TRUE(same(critic_before, *s.critic));
  }
}

TEST(TrainStep, AutoencoderModeZeroesKl) {
  auto cfg = small_config();
  cfg.variational = false;
  TrainState s(cfg, shared_surrogates());
  const auto st = train_step(s, probe_batch());
  EXPECT_EQ(st.losses.l_kl_global, 0.0);
  EXPECT_EQ(st.losses.l_kl_local, 0.0);
  EXPECT_GT(st.l_align, 0.0);
  EXPECT_TRUE(std::isfinite(st.losses.total_gen));
}

TEST(TrainStep, NonFiniteLossIsNamed) {
  TrainState s(small_config(), shared_surrogates());
  {
    torch::NoGradGuard g;
    for (auto& p : s.generator->decoder->parameters()) p.fill_(std::numeric_limits<float>::quiet_NaN());
  }
  try {
    train_step(s, probe_batch());
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
  EXPECT_THROW(TrainState(small_config(), embed::Surrogates{}), NotLoaded);
}

TEST(Training, IdenticalSeedsGiveIdenticalArtifacts) {
  support::TempDir a, b;
  const auto ra = train::train(shared_corpus(), shared_surrogates(), small_config(), a.path());
  const auto rb = train::train(shared_corpus(), shared_surrogates(), small_config(), b.path());
  EXPECT_EQ(slurp(a / "metrics.jsonl"), slurp(b / "metrics.jsonl"));
  EXPECT_EQ(slurp(a / "last.ckpt"), slurp(b / "last.ckpt"));
  EXPECT_EQ(ra.state->history.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(a / "best.ckpt"));
  std::istringstream lines(slurp(a / "metrics.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(std::isfinite(j.at("wasserstein").get<double>()));
    EXPECT_EQ(j.at("epoch"), n);
    ++n;
  }
  EXPECT_EQ(n, 2);
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  support::TempDir a, b;
  const auto full = train::train(shared_corpus(), shared_surrogates(), small_config(), a.path());
  auto cfg = small_config();
  cfg.max_epochs = 1;
  train::train(shared_corpus(), shared_surrogates(), cfg, b.path());
  auto state = load_checkpoint(b / "last.ckpt");
  state->config.max_epochs = 2;
  const auto resumed = run_epochs(std::move(state), shared_corpus(), b.path());
  EXPECT_EQ(model::parameter_checksum(*full.state->generator),
            model::parameter_checksum(*resumed.state->generator));
  EXPECT_EQ(model::parameter_checksum(*full.state->critic), model::parameter_checksum(*resumed.state->critic));
}

TEST(Training, PlateauStopsAtPatienceBoundary) {
  support::TempDir dir;
  auto cfg = small_config();
  cfg.critic_iters_per_gen = 0;
  cfg.patience_epochs = 10;
  cfg.max_epochs = 50;
  TrainHooks hooks;
  // Improves over epochs 0..2, then flat.
  hooks.critic_objective = [](int64_t epoch, double) { return epoch < 3 ? 10.0 - double(epoch) : 8.0; };
  const auto r = train::train(shared_corpus(), shared_surrogates(), cfg, dir.path(), hooks);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.state->best_epoch, 2);
  EXPECT_EQ(r.state->epoch, 13);
}

TEST(Training, MaxGenStepsBudget) {
  support::TempDir dir;
  auto cfg = small_config();
  cfg.max_gen_steps = 1;
  cfg.max_epochs = 10;
  const auto r = train::train(shared_corpus(), shared_surrogates(), cfg, dir.path());
  EXPECT_EQ(r.state->gen_steps, 1);
}

TEST(Checkpointing, ProbeOutputsSurviveRoundTrip) {
  support::TempDir dir;
  TrainState s(small_config(), shared_surrogates());
  const auto b = probe_batch();
  train_step(s, b);
  save_checkpoint(s, dir / "s.ckpt");
  std::vector<std::string> warnings;
  auto other = small_config();
  other.learning_rate = 0.5;
  const auto r = load_checkpoint(dir / "s.ckpt", other, &warnings);
  EXPECT_FALSE(warnings.empty());
  EXPECT_DOUBLE_EQ(r->config.learning_rate, small_config().learning_rate);
  EXPECT_EQ(r->gen_steps, 1);
  s.generator->eval();
  r->generator->eval();
  torch::NoGradGuard g;
  const auto p1 = s.generator->lip_distribution(b.video);
  const auto p2 = r->generator->lip_distribution(b.video);
  EXPECT_TRUE(torch::equal(p1.mu, p2.mu));
  EXPECT_TRUE(torch::equal(p1.sigma, p2.sigma));
  EXPECT_TRUE(torch::equal(s.critic->forward(b.mel), r->critic->forward(b.mel)));
  EXPECT_EQ(s.surrogates.checksum(), r->surrogates.checksum());
}

TEST(Checkpointing, TruncatedFileLoadsNothing) {
  support::TempDir dir;
  TrainState s(small_config(), shared_surrogates());
  save_checkpoint(s, dir / "s.ckpt");
  const auto bytes = slurp(dir / "s.ckpt");
  {
    std::ofstream f(dir / "t.ckpt", std::ios::binary);
    f << bytes.substr(0, bytes.size() / 2);
  }
  EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), CorruptData);
}

TEST(Finetune, ZeroStepsKeepsBaseAndFrozenSurrogates) {
  support::TempDir base_dir, ft_dir;
  auto cfg = small_config();
  cfg.max_gen_steps = 1;
  const auto base = train::train(shared_corpus(), shared_surrogates(), cfg, base_dir.path());
  auto zero = small_config();
  zero.max_gen_steps = 0;
  std::vector<std::string> warnings;
  TrainHooks hooks;
  hooks.warn = [&](const std::string& m) { warnings.push_back(m); };
  const auto ft = finetune(base.last_checkpoint, shared_corpus(), zero, ft_dir.path(), hooks);
  EXPECT_EQ(model::parameter_checksum(*ft.state->generator), model::parameter_checksum(*base.state->generator));
  EXPECT_EQ(ft.state->gen_steps, 0);
  EXPECT_EQ(warnings.size(), 1u);  // two speakers in the fine-tune data
  EXPECT_TRUE(std::filesystem::exists(ft.last_checkpoint));

  auto one = small_config();
  one.max_gen_steps = 1;
  const auto moved = finetune(base.last_checkpoint, shared_corpus(), one, ft_dir / "b");
  EXPECT_EQ(moved.state->surrogates.checksum(), shared_surrogates().checksum());
  EXPECT_NE(model::parameter_checksum(*moved.state->generator), model::parameter_checksum(*base.state->generator));
}
