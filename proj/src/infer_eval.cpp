#include "lipvox/infer_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <Eigen/Dense>

#include "lipvox/error.hpp"
#include "lipvox/kernels.hpp"
#include "lipvox/losses.hpp"

namespace lipvox::infer {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> as_matrix(const FeatureSet& f) {
  return {f.values.data(), f.n, f.dim};
}

void check_sets(const FeatureSet& a, const FeatureSet& b) {
  if (a.n < 2 || b.n < 2) throw InvalidArgument("feature sets need at least two rows each");
  if (a.dim != b.dim || a.dim < 1) throw InvalidArgument("feature sets differ in dimension");
}

dsp::MelSpectrogram to_mel(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  dsp::MelSpectrogram m;
  m.num_steps = c.size(0);
  m.values.assign(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  return m;
}

dsp::MelSpectrogram first_second(const dsp::MelSpectrogram& mel) {
  if (mel.num_steps < embed::kSpeakerSteps) {
    throw InvalidArgument("voice reference must cover at least 1 s");
  }
  return dsp::mel_segment(mel, 0, embed::kSpeakerSteps);
}

}  // namespace

std::string to_string(Mode m) { return m == Mode::kMean ? "mean" : "sample"; }

Mode mode_from(const std::string& s) {
  if (s == "mean") return Mode::kMean;
  if (s == "sample") return Mode::kSample;
  throw InvalidArgument("mode must be mean or sample (got '" + s + "')");
}

Synthesizer::Synthesizer(const std::filesystem::path& checkpoint)
    : Synthesizer(*train::load_checkpoint(checkpoint)) {}

Synthesizer::Synthesizer(const train::TrainState& state)
    : generator_(state.generator), surrogates_(state.surrogates), crop_(state.config.crop_mode) {
  generator_->eval();
}

model::LatentDistribution Synthesizer::lip_distribution(const corpus::Frames& frames) const {
  if (frames.count < model::kReceptiveFrames) {
    throw InvalidArgument("synthesis needs at least 5 frames");
  }
  if (static_cast<int64_t>(frames.pixels.size()) != frames.count * corpus::kFramePixels) {
    throw InvalidArgument("frame buffer size does not match 96x96x3 frames");
  }
  return lip_distribution(model::frames_to_input(train::frames_tensor(frames), crop_));
}

model::LatentDistribution Synthesizer::lip_distribution(const torch::Tensor& video) const {
  torch::NoGradGuard guard;
  generator_.ptr()->eval();
  return generator_.ptr()->lip_distribution(video);
}

torch::Tensor Synthesizer::voice_embedding(const dsp::MelSpectrogram& mel) const {
  torch::NoGradGuard guard;
  return surrogates_.speaker_embed(embed::mel_tensor(first_second(mel)).unsqueeze(0));
}

torch::Tensor Synthesizer::voice_embedding(const dsp::Waveform& wave) const {
  return voice_embedding(dsp::melspectrogram(wave));
}

torch::Tensor Synthesizer::decode(const model::LatentDistribution& d, const torch::Tensor& voice,
                                  Mode mode, uint64_t seed) const {
  torch::NoGradGuard guard;
  torch::Tensor z = d.mu;
  if (mode == Mode::kSample) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    z = model::reparam_sample(d, gen);
  }
  auto v = voice.size(0) == z.size(0) ? voice : voice.expand({z.size(0), voice.size(1)});
  return generator_.ptr()->decoder->forward(z, v);
}

SynthesisResult Synthesizer::synthesize(const SynthesisRequest& req, bool with_audio) const {
  const auto dist = lip_distribution(req.frames);
  const auto voice = voice_embedding(req.voice_reference);
  SynthesisResult out;
  out.mel = to_mel(decode(dist, voice, req.mode, req.seed).squeeze(0));
  if (with_audio) out.audio = dsp::griffin_lim(out.mel, req.griffin_lim_iterations);
  return out;
}

std::vector<float> Synthesizer::sample_outputs(const corpus::Frames& frames,
                                               const dsp::Waveform& voice, int64_t n) const {
  const auto dist = lip_distribution(frames);
  const auto v = voice_embedding(voice);
  std::vector<float> rows;
  for (int64_t i = 0; i < n; ++i) {
    auto mel = decode(dist, v, Mode::kSample, static_cast<uint64_t>(i)).contiguous();
    rows.insert(rows.end(), mel.data_ptr<float>(), mel.data_ptr<float>() + mel.numel());
  }
  return rows;
}

std::string Synthesizer::checkpoint_id() const {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(model::parameter_checksum(*generator_)));
  return buf;
}

double sed(const embed::Surrogates& s, const dsp::MelSpectrogram& generated,
           const dsp::MelSpectrogram& reference) {
  const auto a = s.speaker_embed(first_second(generated));
  const auto b = s.speaker_embed(first_second(reference));
  double d = 0;
  for (size_t i = 0; i < a.size(); ++i) d += std::abs(double(a[i]) - double(b[i]));
  return d;
}

void FeatureSet::add(std::span<const float> r) {
  std::vector<double> tmp(r.begin(), r.end());
  add(std::span<const double>(tmp));
}

void FeatureSet::add(std::span<const double> r) {
  if (n == 0 && dim == 0) dim = static_cast<int64_t>(r.size());
  if (static_cast<int64_t>(r.size()) != dim) throw InvalidArgument("feature row has wrong size");
  values.insert(values.end(), r.begin(), r.end());
  ++n;
}

std::vector<double> content_features(const embed::Surrogates& s, const dsp::MelSpectrogram& mel) {
  auto f = s.content_encode(embed::mel_tensor(mel)).to(torch::kFloat64).mean(0).contiguous();
  return {f.data_ptr<double>(), f.data_ptr<double>() + f.numel()};
}

double fdsd(const FeatureSet& gen, const FeatureSet& ref) {
  check_sets(gen, ref);
  const auto x = as_matrix(gen);
  const auto y = as_matrix(ref);
  const Eigen::RowVectorXd mx = x.colwise().mean();
  const Eigen::RowVectorXd my = y.colwise().mean();
  const RowMatrix cx = x.rowwise() - mx;
  const RowMatrix cy = y.rowwise() - my;
  const Eigen::MatrixXd sx = (cx.transpose() * cx) / double(gen.n - 1);
  const Eigen::MatrixXd sy = (cy.transpose() * cy) / double(ref.n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sx);
  if (es.info() != Eigen::Success) throw NumericalError("covariance eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(kEigenFloor).cwiseSqrt();
  const Eigen::MatrixXd sx_half = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::MatrixXd inner = sx_half * sy * sx_half;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2((inner + inner.transpose()) * 0.5,
                                                      Eigen::EigenvaluesOnly);
  if (es2.info() != Eigen::Success) throw NumericalError("covariance product eigendecomposition failed");
  const double tr_sqrt = es2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mx - my).squaredNorm() + sx.trace() + sy.trace() - 2.0 * tr_sqrt;
  if (!std::isfinite(value)) throw NumericalError("degenerate covariance in FDSD");
  return value;
}

double kdsd_raw(const FeatureSet& gen, const FeatureSet& ref) {
  check_sets(gen, ref);
  const double m = double(gen.n), n = double(ref.n);
  const double kxx = kernels::poly_kernel_sum(gen.values, gen.n, gen.values, gen.n, gen.dim, true);
  const double kyy = kernels::poly_kernel_sum(ref.values, ref.n, ref.values, ref.n, ref.dim, true);
  const double kxy = kernels::poly_kernel_sum(gen.values, gen.n, ref.values, ref.n, gen.dim, false);
  return kxx / (m * (m - 1)) + kyy / (n * (n - 1)) - 2.0 * kxy / (m * n);
}

double kdsd(const FeatureSet& gen, const FeatureSet& ref) { return 1e3 * kdsd_raw(gen, ref); }

double unique_percentage(std::span<const float> rows, int64_t n, int64_t dim, double delta) {
  if (n < 2) throw InvalidArgument("generative strength needs N >= 2");
  if (static_cast<int64_t>(rows.size()) != n * dim) throw InvalidArgument("row buffer size mismatch");
  std::vector<double> dist(static_cast<size_t>(n * n));
  kernels::pairwise_l2(rows, n, dim, dist);
  int64_t unique = 0;
  for (int64_t i = 0; i < n; ++i) {
    double nearest = INFINITY;
    for (int64_t j = 0; j < n; ++j) {
      if (j != i) nearest = std::min(nearest, dist[i * n + j]);
    }
    if (nearest >= delta) ++unique;
  }
  return 100.0 * double(unique) / double(n);
}

double generative_strength(const Synthesizer& model, const corpus::Frames& frames,
                           const dsp::Waveform& voice_reference, int64_t n, double delta) {
  if (n < 2) throw InvalidArgument("generative strength needs N >= 2");
  const auto rows = model.sample_outputs(frames, voice_reference, n);
  return unique_percentage(rows, n, static_cast<int64_t>(rows.size()) / n, delta);
}

nlohmann::json eval_corpus(const Synthesizer& model, const corpus::CorpusData& data,
                           const EvalConfig& config) {
  if (data.utterances.empty()) throw InvalidArgument("evaluation corpus is empty");
  if (config.stride_frames < 1) throw InvalidArgument("stride_frames must be >= 1");
  const auto& s = model.surrogates();
  FeatureSet gen_features, ref_features;
  double sed_sum = 0, l1_sum = 0;
  int64_t windows = 0;
  for (size_t u = 0; u < data.utterances.size(); ++u) {
    const auto& utt = data.utterances[u];
    torch::Tensor voice;
    if (!config.ground_truth) voice = model.voice_embedding(utt.mel);
    for (int64_t start = 0; start + corpus::kWindowFrames <= utt.frames.count;
         start += config.stride_frames) {
      const auto target =
          dsp::mel_segment(utt.mel, start * corpus::kStepsPerFrame, corpus::kWindowSteps);
      dsp::MelSpectrogram generated = target;
      if (!config.ground_truth) {
        const auto dist = model.lip_distribution(utt.frames.slice(start, corpus::kWindowFrames));
        const uint64_t seed = derive_seed(config.seed, u, static_cast<uint64_t>(start));
        generated = to_mel(model.decode(dist, voice, config.mode, seed).squeeze(0));
      }
      sed_sum += sed(s, generated, target);
      double l1 = 0;
      for (size_t i = 0; i < target.values.size(); ++i) {
        l1 += std::abs(double(generated.values[i]) - double(target.values[i]));
      }
      l1_sum += l1 / double(target.values.size());
      gen_features.add(std::span<const double>(content_features(s, generated)));
      ref_features.add(std::span<const double>(content_features(s, target)));
      ++windows;
    }
  }
  if (windows < 2) throw InvalidArgument("evaluation corpus yields fewer than two windows");
  return {{"sed", sed_sum / double(windows)},
          {"fdsd", fdsd(gen_features, ref_features)},
          {"kdsd", kdsd(gen_features, ref_features)},
          {"recon_l1", l1_sum / double(windows)},
          {"n", windows},
          {"seed", config.seed},
          {"mode", to_string(config.mode)},
          {"ground_truth", config.ground_truth},
          {"checkpoint", model.checkpoint_id()}};
}

}  // namespace lipvox::infer
