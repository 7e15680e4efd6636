// lipvox command-line entry point.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lipvox/audio_dsp.hpp"
#include "lipvox/config.hpp"
#include "lipvox/embedders.hpp"
#include "lipvox/error.hpp"
#include "lipvox/infer_eval.hpp"
#include "lipvox/synth_corpus.hpp"
#include "lipvox/train_loop.hpp"

namespace fs = std::filesystem;
using namespace lipvox;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

std::string flag_name(const std::string& key) {
  std::string out = "--";
  for (char c : key) out += c == '_' ? '-' : c;
  return out;
}

// One command with its config section overrides.
struct Command {
  CLI::App* app = nullptr;
  std::vector<std::string> sections;
  std::string config_path;
  std::optional<uint64_t> seed;
  std::map<std::string, std::string> overrides;  // "section.key" -> raw value

  config::RunConfig resolve() const {
    config::RunConfig c = config_path.empty() ? config::RunConfig{} : config::load_config(config_path);
    for (const auto& [name, value] : overrides) {
      const auto dot = name.find('.');
      config::set_value(c, name.substr(0, dot), name.substr(dot + 1), value);
    }
    for (const auto& section : sections) {
      if (seed) config::set_value(c, section, "seed", std::to_string(*seed));
      config::resolve_seed(c, section);
    }
    return c;
  }
};

void add_overrides(Command& cmd, const std::string& section, const std::vector<std::string>& skip = {}) {
  const config::RunConfig defaults;
  for (const auto& f : config::fields()) {
    if (f.section != section || f.key == "seed") continue;
    if (std::find(skip.begin(), skip.end(), f.key) != skip.end()) continue;
    const std::string name = section + "." + f.key;
    auto* opt = cmd.app->add_option_function<std::string>(
        flag_name(f.key), [&cmd, name](const std::string& v) { cmd.overrides[name] = v; }, f.help);
    std::string shown = f.get(defaults);
    if (shown.size() >= 2 && shown.front() == '"') {
      shown = shown.substr(1, shown.size() - 2);
      opt->type_name("TEXT");
    } else if (shown == "true" || shown == "false") {
      opt->type_name("BOOL");
    } else if (shown.find_first_of(".e") != std::string::npos) {
      opt->type_name("FLOAT");
    } else {
      opt->type_name("INT");
    }
    opt->default_str(shown);
  }
  cmd.sections.push_back(section);
}

void add_common(Command& cmd) {
  cmd.app->add_option("--config", cmd.config_path, "TOML config file")->check(CLI::ExistingFile);
  cmd.app->add_option("--seed", cmd.seed, "seed (falls back to the config file, then LIPVOX_SEED)");
}

void echo(const config::RunConfig& c, const std::vector<std::string>& sections) {
  std::cout << "# resolved config\n" << config::to_toml(c, sections) << std::flush;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

// float32 (steps x 80) array in NumPy .npy format.
void save_npy(const fs::path& path, const dsp::MelSpectrogram& mel) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
                       std::to_string(mel.num_steps) + ", " + std::to_string(dsp::kMelBands) + "), }";
  const size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  const char magic[] = {'\x93', 'N', 'U', 'M', 'P', 'Y', 1, 0};
  f.write(magic, sizeof(magic));
  const uint16_t len = static_cast<uint16_t>(header.size());
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f << header;
  f.write(reinterpret_cast<const char*>(mel.values.data()),
          static_cast<std::streamsize>(mel.values.size() * sizeof(float)));
}

corpus::CorpusData load_selected(const fs::path& corpus_path, const config::DataSelection& sel) {
  auto manifest = corpus::load_manifest(corpus_path);
  if (sel.fraction < 1.0 || sel.from_end) {
    std::vector<std::string> ids;
    for (const auto& s : manifest.speakers) ids.push_back(s.id);
    manifest = corpus::select_utterances(manifest, ids, sel.fraction, sel.from_end);
  }
  return corpus::load_corpus(manifest);
}

fs::path default_surrogates(const fs::path& corpus_path) {
  const fs::path root = fs::is_directory(corpus_path) ? corpus_path : corpus_path.parent_path();
  return root / "surrogates.ckpt";
}

void print_epoch(const train::EpochRecord& r) {
  std::printf("epoch %lld  steps %lld  l_r %.5f  kl_g %.4f  kl_l %.4f  voice %.4f  critic %.4f\n",
              static_cast<long long>(r.epoch), static_cast<long long>(r.gen_steps), r.losses.l_r,
              r.losses.l_kl_global, r.losses.l_kl_local, r.losses.l_voice, r.critic_objective);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lipvox: lip-to-speech VAE-GAN on a synthetic audio-visual corpus"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(40);

  // gen-data
  Command gen{app.add_subcommand("gen-data", "generate a synthetic corpus")};
  std::string gen_out;
  add_common(gen);
  add_overrides(gen, "corpus");
  gen.app->add_option("--out", gen_out, "corpus root directory")->required();

  // pretrain-surrogates
  Command pre{app.add_subcommand("pretrain-surrogates", "train the frozen content and speaker networks")};
  std::string pre_corpus, pre_out;
  add_common(pre);
  add_overrides(pre, "surrogates");
  pre.app->add_option("--corpus", pre_corpus, "corpus root or manifest")->required();
  pre.app->add_option("--out", pre_out, "output surrogate file (default: <corpus>/surrogates.ckpt)");

  // train
  Command tr{app.add_subcommand("train", "train generator and critic")};
  std::string tr_corpus, tr_surrogates, tr_out;
  add_common(tr);
  add_overrides(tr, "train");
  tr.app->add_option("--corpus", tr_corpus, "corpus root or manifest")->required();
  tr.app->add_option("--surrogates", tr_surrogates,
                     "surrogate file from pretrain-surrogates (default: <corpus>/surrogates.ckpt)");
  tr.app->add_option("--out", tr_out, "run directory")->required();

  // finetune
  Command ft{app.add_subcommand("finetune", "continue from a checkpoint on new data")};
  std::string ft_ckpt, ft_corpus, ft_out;
  add_common(ft);
  add_overrides(ft, "train");
  ft.app->add_option("--ckpt", ft_ckpt, "base checkpoint")->required();
  ft.app->add_option("--corpus", ft_corpus, "corpus root or manifest")->required();
  ft.app->add_option("--out", ft_out, "run directory")->required();

  // synth
  Command sy{app.add_subcommand("synth", "synthesize speech from lip frames")};
  std::string sy_ckpt, sy_frames, sy_voice, sy_out;
  add_common(sy);
  add_overrides(sy, "eval", {"stride_frames", "n", "delta"});
  sy.app->add_option("--ckpt", sy_ckpt, "checkpoint")->required();
  sy.app->add_option("--frames", sy_frames, "directory of 96x96 PNG frames")->required();
  sy.app->add_option("--voice", sy_voice, "voice reference WAV (>= 1 s)")->required();
  sy.app->add_option("--out", sy_out, "output WAV; the mel goes next to it as .npy")->required();

  // eval
  Command ev{app.add_subcommand("eval", "score a checkpoint on a held-out corpus")};
  std::string ev_ckpt, ev_corpus, ev_out;
  bool ev_gt = false;
  add_common(ev);
  add_overrides(ev, "eval", {"n", "delta", "griffin_lim_iterations"});
  ev.app->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
  ev.app->add_option("--corpus", ev_corpus, "corpus root or manifest")->required();
  ev.app->add_option("--out", ev_out, "report path (default: stdout only)");
  ev.app->add_flag("--ground-truth", ev_gt, "score ground truth against itself");

  // gstrength
  Command gs{app.add_subcommand("gstrength", "percentage of unique sampled outputs")};
  std::string gs_ckpt, gs_frames, gs_voice, gs_out;
  add_common(gs);
  add_overrides(gs, "eval", {"stride_frames", "mode", "griffin_lim_iterations"});
  gs.app->add_option("--ckpt", gs_ckpt, "checkpoint")->required();
  gs.app->add_option("--frames", gs_frames, "directory of 96x96 PNG frames")->required();
  gs.app->add_option("--voice", gs_voice, "voice reference WAV (>= 1 s)")->required();
  gs.app->add_option("--out", gs_out, "report path (default: stdout only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*gen.app) {
      auto c = gen.resolve();
      echo(c, {"corpus"});
      const auto m = corpus::generate_corpus(c.corpus, gen_out);
      std::cout << (m.root / "manifest.json").string() << "\n";
    } else if (*pre.app) {
      auto c = pre.resolve();
      echo(c, {"surrogates"});
      const auto data = corpus::load_corpus(corpus::load_manifest(pre_corpus));
      const auto s = embed::pretrain_surrogates(
          data, c.surrogates, [](const std::string& stage, int64_t step, double loss) {
            if (step % 100 == 0) std::printf("%s step %lld loss %.5f\n", stage.c_str(), static_cast<long long>(step), loss);
          });
      const fs::path out = pre_out.empty() ? default_surrogates(pre_corpus) : fs::path(pre_out);
      embed::save_surrogates(s, out);
      std::cout << out.string() << "\n";
    } else if (*tr.app) {
      auto c = tr.resolve();
      echo(c, {"train"});
      const auto data = load_selected(tr_corpus, c.data);
      const auto s = embed::load_surrogates(tr_surrogates.empty() ? default_surrogates(tr_corpus)
                                                                  : fs::path(tr_surrogates));
      fs::create_directories(tr_out);
      write_text(fs::path(tr_out) / "config.toml", config::to_toml(c, {"train"}));
      train::TrainHooks hooks;
      hooks.on_epoch = print_epoch;
      const auto r = train::train(data, s, c.train, tr_out, hooks);
      std::cout << r.best_checkpoint.string() << "\n";
    } else if (*ft.app) {
      auto c = ft.resolve();
      echo(c, {"train"});
      const auto data = load_selected(ft_corpus, c.data);
      fs::create_directories(ft_out);
      write_text(fs::path(ft_out) / "config.toml", config::to_toml(c, {"train"}));
      train::TrainHooks hooks;
      hooks.on_epoch = print_epoch;
      hooks.warn = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
      const auto r = train::finetune(ft_ckpt, data, c.train, ft_out, hooks);
      std::cout << r.best_checkpoint.string() << "\n";
    } else if (*sy.app) {
      auto c = sy.resolve();
      echo(c, {"eval"});
      const infer::Synthesizer model(sy_ckpt);
      infer::SynthesisRequest req;
      req.frames = corpus::load_frames(sy_frames);
      req.voice_reference = dsp::load_wav(sy_voice);
      req.mode = c.eval.eval.mode;
      req.seed = c.eval.eval.seed;
      req.griffin_lim_iterations = c.eval.griffin_lim_iterations;
      const auto out = model.synthesize(req);
      dsp::save_wav(out.audio, sy_out);
      auto npy = fs::path(sy_out);
      npy.replace_extension(".npy");
      save_npy(npy, out.mel);
      std::cout << sy_out << "\n" << npy.string() << "\n";
    } else if (*ev.app) {
      auto c = ev.resolve();
      echo(c, {"eval"});
      const infer::Synthesizer model(ev_ckpt);
      auto cfg = c.eval.eval;
      cfg.ground_truth = ev_gt;
      const auto data = corpus::load_corpus(corpus::load_manifest(ev_corpus));
      auto report = infer::eval_corpus(model, data, cfg);
      report["config"] = config::to_toml(c, {"eval"});
      std::cout << report.dump(2) << "\n";
      if (!ev_out.empty()) write_text(ev_out, report.dump(2) + "\n");
    } else if (*gs.app) {
      auto c = gs.resolve();
      echo(c, {"eval"});
      const infer::Synthesizer model(gs_ckpt);
      const auto frames = corpus::load_frames(gs_frames);
      const auto voice = dsp::load_wav(gs_voice);
      const double pct = infer::generative_strength(model, frames, voice, c.eval.n, c.eval.delta);
      nlohmann::json report = {{"generative_strength", pct},
                                     {"n", c.eval.n},
                                     {"delta", c.eval.delta},
                                     {"checkpoint", model.checkpoint_id()},
                                     {"config", config::to_toml(c, {"eval"})}};
      std::cout << report.dump(2) << "\n";
      if (!gs_out.empty()) write_text(gs_out, report.dump(2) + "\n");
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
