#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "lipvox/embedders.hpp"
#include "lipvox/losses.hpp"
#include "lipvox/model_core.hpp"
#include "lipvox/synth_corpus.hpp"

namespace lipvox::train {

enum class SamplingSource { kContent, kLip, kAlternate };

struct TrainConfig {
  int64_t batch_size = 32;
  double learning_rate = 5e-5;
  int64_t critic_iters_per_gen = 5;
  SamplingSource sampling_source = SamplingSource::kContent;
  bool variational = true;
  model::CropMode crop_mode = model::CropMode::kFullFace;
  loss::LossWeights weights;
  int64_t patience_epochs = 10;
  double min_improvement = 1e-4;
  int64_t max_epochs = 100;
  int64_t max_gen_steps = -1;  // < 0: unlimited
  double rmsprop_alpha = 0.9;
  double rmsprop_eps = 1e-8;
  bool kl_content_first = true;
  // KL weights ramp linearly from 0 over this many generator steps (0: off).
  int64_t kl_warmup_steps = 0;
  bool keep_epoch_checkpoints = false;
  uint64_t seed = 1;

  void validate() const;
};

std::string to_string(SamplingSource s);
SamplingSource sampling_source_from(const std::string& s);
std::string to_string(model::CropMode c);
model::CropMode crop_mode_from(const std::string& s);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  int64_t epoch = 0;
  int64_t gen_steps = 0;
  loss::LossBreakdown losses;  // epoch means
  double l_align = 0;
  double critic_objective = 0;  // mean of l_adv_critic + lambda_gp * l_gp
};

nlohmann::json to_json(const EpochRecord& r);

// The full mutable training state. Generator and critic train; the
// surrogates ride along frozen.
class TrainState {
 public:
  TrainState(const TrainConfig& config, embed::Surrogates surrogates);

  TrainConfig config;
  model::Generator generator;
  model::Critic critic;
  embed::Surrogates surrogates;
  torch::optim::RMSprop gen_opt;
  torch::optim::RMSprop critic_opt;
  at::Generator torch_rng;
  Rng rng;
  int64_t epoch = 0;      // completed epochs
  int64_t gen_steps = 0;  // completed generator updates
  double best_critic = 0;
  int64_t best_epoch = -1;
  int64_t epochs_since_best = 0;
  std::vector<EpochRecord> history;
};

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);

// Restores everything. If `expected` differs from the stored config the
// stored one wins and a warning is written to `warnings`.
std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& path,
                                            const std::optional<TrainConfig>& expected = std::nullopt,
                                            std::vector<std::string>* warnings = nullptr);

struct TrainHooks {
  // Replaces the measured epoch-mean critic objective (stopping-rule tests).
  std::function<double(int64_t epoch, double measured)> critic_objective;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const std::string&)> warn;
};

struct TrainResult {
  std::unique_ptr<TrainState> state;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  bool stopped_early = false;
};

// Runs epochs until patience, max_epochs or max_gen_steps. Writes
// last.ckpt / best.ckpt / metrics.jsonl under out_dir.
TrainResult train(const corpus::CorpusData& data, const embed::Surrogates& surrogates,
                  const TrainConfig& config, const std::filesystem::path& out_dir,
                  const TrainHooks& hooks = {});

// Starts from `base` weights with fresh optimizer state and counters.
TrainResult finetune(const std::filesystem::path& base, const corpus::CorpusData& data,
                     const TrainConfig& config, const std::filesystem::path& out_dir,
                     const TrainHooks& hooks = {});

// Continues training an existing state in place.
TrainResult run_epochs(std::unique_ptr<TrainState> state, const corpus::CorpusData& data,
                       const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

struct BatchTensors {
  torch::Tensor video;        // (B, 3, 25, 96, 96)
  torch::Tensor mel;          // (B, 100, 80)
  torch::Tensor speaker_ref;  // (B, 100, 80)
};

BatchTensors to_tensors(const corpus::Batch& batch, model::CropMode crop);

// Frames (uint8) -> (1, T, 96, 96, 3) tensor.
torch::Tensor frames_tensor(const corpus::Frames& frames);

// One outer step: critic_iters critic updates, then one generator update.
// Exposed for gradient-provenance tests.
struct StepStats {
  loss::LossBreakdown losses;
  double l_align = 0;
  double critic_objective = 0;
};
StepStats train_step(TrainState& state, const BatchTensors& batch);

}  // namespace lipvox::train
