#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lipvox/embedders.hpp"
#include "lipvox/infer_eval.hpp"
#include "lipvox/synth_corpus.hpp"
#include "lipvox/train_loop.hpp"

namespace lipvox::config {

// Which utterances of each speaker a training run sees.
struct DataSelection {
  double fraction = 1.0;
  bool from_end = false;
};

struct EvalSection {
  infer::EvalConfig eval;
  int64_t n = 100;
  double delta = infer::kDefaultDelta;
  int griffin_lim_iterations = 60;
};

struct RunConfig {
  std::optional<uint64_t> seed;  // top-level fallback seed
  corpus::GenerateOptions corpus;
  embed::SurrogateConfig surrogates;
  train::TrainConfig train;
  DataSelection data;
  EvalSection eval;

  // "section.key" entries given explicitly by a file or flag.
  std::set<std::string> explicit_keys;
};

struct Field {
  std::string section;
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Every configurable key, in echo order.
const std::vector<Field>& fields();

// Throws InvalidArgument on unknown sections/keys or bad values.
void set_value(RunConfig& c, const std::string& section, const std::string& key,
               const std::string& value);

// TOML with sections corpus, surrogates, train, eval and an optional
// top-level seed.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);

// Sections in field order; `sections` empty means all.
std::string to_toml(const RunConfig& c, const std::vector<std::string>& sections = {});

// Seed for `section`: explicit section key, else top-level seed, else the
// LIPVOX_SEED environment variable, else the built-in default.
void resolve_seed(RunConfig& c, const std::string& section);

}  // namespace lipvox::config
