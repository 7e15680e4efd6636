#include "lipvox/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <sstream>

#include <toml.hpp>

#include "lipvox/error.hpp"

namespace lipvox::config {

namespace {

int64_t parse_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw InvalidArgument(key + ": expected an integer, got '" + v + "'");
  return out;
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
  const int64_t out = parse_int(key, v);
  if (out < 0) throw InvalidArgument(key + ": expected a non-negative integer");
  return static_cast<uint64_t>(out);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw InvalidArgument(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw InvalidArgument(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, p);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string fmt(bool v) { return v ? "true" : "false"; }

std::string quote(const std::string& s) { return "\"" + s + "\""; }

#define LV_INT(section, member, key, field, help)                                          \
  Field{section, key, help,                                                                 \
        [](const RunConfig& c) { return std::to_string(c.member.field); },                  \
        [](RunConfig& c, const std::string& v) {                                            \
          c.member.field = static_cast<decltype(c.member.field)>(parse_int(section "." key, v)); \
        }}

#define LV_UINT(section, member, key, field, help)                                          \
  Field{section, key, help,                                                                  \
        [](const RunConfig& c) { return std::to_string(c.member.field); },                   \
        [](RunConfig& c, const std::string& v) { c.member.field = parse_uint(section "." key, v); }}

#define LV_DOUBLE(section, member, key, field, help)                                         \
  Field{section, key, help, [](const RunConfig& c) { return fmt(c.member.field); },          \
        [](RunConfig& c, const std::string& v) { c.member.field = parse_double(section "." key, v); }}

#define LV_BOOL(section, member, key, field, help)                                                \
  Field{section, key, help, [](const RunConfig& c) { return fmt(static_cast<bool>(c.member.field)); }, \
        [](RunConfig& c, const std::string& v) { c.member.field = parse_bool(section "." key, v); }}

std::vector<Field> build_fields() {
  std::vector<Field> f = {
      LV_INT("corpus", corpus, "speakers", num_speakers, "number of speakers"),
      LV_INT("corpus", corpus, "utts", utts_per_speaker, "utterances per speaker"),
      LV_DOUBLE("corpus", corpus, "seconds", utt_seconds, "utterance length in seconds"),
      LV_UINT("corpus", corpus, "seed", seed, "generator seed"),
      LV_INT("corpus", corpus, "first_speaker", first_speaker, "index of the first speaker"),

      LV_INT("surrogates", surrogates, "content_steps", content_steps, "content encoder updates"),
      LV_INT("surrogates", surrogates, "speaker_steps", speaker_steps, "speaker encoder updates"),
      LV_INT("surrogates", surrogates, "batch_size", batch_size, "windows per update"),
      LV_DOUBLE("surrogates", surrogates, "learning_rate", learning_rate, "Adam learning rate"),
      LV_DOUBLE("surrogates", surrogates, "cosine_scale", cosine_scale, "speaker classifier logit scale"),
      LV_UINT("surrogates", surrogates, "seed", seed, "pretraining seed"),

      LV_INT("train", train, "batch_size", batch_size, "windows per batch"),
      LV_DOUBLE("train", train, "learning_rate", learning_rate, "RMSProp learning rate"),
      LV_INT("train", train, "critic_iters_per_gen", critic_iters_per_gen,
             "critic updates per generator update"),
      Field{"train", "sampling_source", "decoder input during training: content, lip or alternate",
            [](const RunConfig& c) { return quote(train::to_string(c.train.sampling_source)); },
            [](RunConfig& c, const std::string& v) {
              c.train.sampling_source = train::sampling_source_from(v);
            }},
      LV_BOOL("train", train, "variational", variational, "sample latents (false: plain auto-encoder)"),
      Field{"train", "crop_mode", "visual input: full_face or lower_half",
            [](const RunConfig& c) { return quote(train::to_string(c.train.crop_mode)); },
            [](RunConfig& c, const std::string& v) { c.train.crop_mode = train::crop_mode_from(v); }},
      LV_DOUBLE("train", train, "lambda_r", weights.lambda_r, "reconstruction weight"),
      LV_DOUBLE("train", train, "lambda_k_global", weights.lambda_k_global, "global KL weight"),
      LV_DOUBLE("train", train, "lambda_k_local", weights.lambda_k_local, "local KL weight"),
      LV_DOUBLE("train", train, "lambda_voice", weights.lambda_voice, "voice loss weight"),
      LV_DOUBLE("train", train, "lambda_gp", weights.lambda_gp, "gradient penalty weight"),
      LV_DOUBLE("train", train, "lambda_adv", weights.lambda_adv, "adversarial weight"),
      LV_INT("train", train, "patience_epochs", patience_epochs, "epochs without critic improvement"),
      LV_DOUBLE("train", train, "min_improvement", min_improvement, "critic improvement threshold"),
      LV_INT("train", train, "max_epochs", max_epochs, "epoch limit"),
      LV_INT("train", train, "max_gen_steps", max_gen_steps, "generator update limit (-1: none)"),
      LV_DOUBLE("train", train, "rmsprop_alpha", rmsprop_alpha, "RMSProp decay"),
      LV_DOUBLE("train", train, "rmsprop_eps", rmsprop_eps, "RMSProp epsilon"),
      LV_BOOL("train", train, "kl_content_first", kl_content_first, "KL[content || lip] order"),
      LV_INT("train", train, "kl_warmup_steps", kl_warmup_steps, "linear KL weight ramp length in generator steps"),
      LV_BOOL("train", train, "keep_epoch_checkpoints", keep_epoch_checkpoints,
              "also write epoch_NNN.ckpt"),
      LV_UINT("train", train, "seed", seed, "training seed"),
      LV_DOUBLE("train", data, "fraction", fraction, "fraction of each speaker's utterances"),
      LV_BOOL("train", data, "from_end", from_end, "take the fraction from the end"),

      LV_INT("eval", eval, "stride_frames", eval.stride_frames, "window stride in frames"),
      Field{"eval", "mode", "decoding: mean or sample",
            [](const RunConfig& c) { return quote(infer::to_string(c.eval.eval.mode)); },
            [](RunConfig& c, const std::string& v) { c.eval.eval.mode = infer::mode_from(v); }},
      LV_UINT("eval", eval, "seed", eval.seed, "sampling seed"),
      LV_INT("eval", eval, "n", n, "samples for generative strength"),
      LV_DOUBLE("eval", eval, "delta", delta, "uniqueness distance"),
      LV_INT("eval", eval, "griffin_lim_iterations", griffin_lim_iterations, "Griffin-Lim iterations"),
  };
  return f;
}

std::string node_text(const std::string& key, const toml::node& n) {
  if (auto v = n.as_integer()) return std::to_string(v->get());
  if (auto v = n.as_floating_point()) return fmt(v->get());
  if (auto v = n.as_boolean()) return fmt(v->get());
  if (auto v = n.as_string()) return v->get();
  throw InvalidArgument(key + ": unsupported value type");
}

RunConfig from_table(const toml::table& root) {
  RunConfig c;
  for (const auto& [k, node] : root) {
    const std::string key(k.str());
    if (const auto* table = node.as_table()) {
      for (const auto& [sk, sn] : *table) {
        set_value(c, key, std::string(sk.str()), node_text(key + "." + std::string(sk.str()), sn));
      }
    } else if (key == "seed") {
      c.seed = parse_uint("seed", node_text("seed", node));
    } else {
      throw InvalidArgument("unknown top-level key '" + key + "'");
    }
  }
  return c;
}

}  // namespace

const std::vector<Field>& fields() {
  static const std::vector<Field> table = build_fields();
  return table;
}

void set_value(RunConfig& c, const std::string& section, const std::string& key,
               const std::string& value) {
  bool known_section = false;
  for (const auto& f : fields()) {
    if (f.section != section) continue;
    known_section = true;
    if (f.key == key) {
      f.set(c, value);
      c.explicit_keys.insert(section + "." + key);
      return;
    }
  }
  if (!known_section) throw InvalidArgument("unknown config section '" + section + "'");
  throw InvalidArgument("unknown config key '" + section + "." + key + "'");
}

RunConfig parse_config(const std::string& text) {
  try {
    return from_table(toml::parse(text));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config parse error: " << e.description() << " at line " << e.source().begin.line;
    throw InvalidArgument(os.str());
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  try {
    return from_table(toml::parse_file(path.string()));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << path.string() << ": " << e.description() << " at line " << e.source().begin.line;
    throw InvalidArgument(os.str());
  }
}

std::string to_toml(const RunConfig& c, const std::vector<std::string>& sections) {
  std::ostringstream os;
  if (c.seed) os << "seed = " << *c.seed << "\n";
  std::string current;
  for (const auto& f : fields()) {
    if (!sections.empty() && std::find(sections.begin(), sections.end(), f.section) == sections.end()) {
      continue;
    }
    if (f.section != current) {
      if (os.tellp() > 0) os << "\n";
      os << "[" << f.section << "]\n";
      current = f.section;
    }
    os << f.key << " = " << f.get(c) << "\n";
  }
  return os.str();
}

void resolve_seed(RunConfig& c, const std::string& section) {
  if (c.explicit_keys.count(section + ".seed")) return;
  std::optional<uint64_t> seed = c.seed;
  if (!seed) {
    if (const char* env = std::getenv("LIPVOX_SEED"); env != nullptr && *env != '\0') {
      seed = parse_uint("LIPVOX_SEED", env);
    }
  }
  if (seed) set_value(c, section, "seed", std::to_string(*seed));
}

}  // namespace lipvox::config
