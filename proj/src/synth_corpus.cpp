#include "lipvox/synth_corpus.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lipvox/error.hpp"
#include "lipvox/image_io.hpp"

namespace lipvox::corpus {
namespace {

using json = nlohmann::json;
constexpr double kPi = std::numbers::pi;

struct PhonemeSound {
  double f1, f2;
  double loudness;
  double noise;  // fricative noise share
};

// Phoneme 0 is silence. 1 and 2 are acoustically distinct but share a
// viseme (see viseme_table).
constexpr std::array<PhonemeSound, kNumPhonemes> kSounds{{
    {0, 0, 0.0, 0.0},
    {280, 2250, 0.75, 0.0},
    {420, 1850, 0.85, 0.0},
    {520, 1700, 0.9, 0.0},
    {700, 1200, 1.0, 0.0},
    {760, 1500, 1.0, 0.0},
    {600, 950, 0.9, 0.0},
    {450, 850, 0.8, 0.0},
    {320, 800, 0.7, 0.0},
    {350, 1300, 0.75, 0.0},
    {650, 2000, 0.95, 0.0},
    {480, 1150, 0.6, 0.35},
}};

constexpr std::array<Viseme, kNumPhonemes> kVisemes{{
    {1.0}, {1.3}, {1.3}, {1.15}, {0.95}, {1.05}, {0.8}, {0.7}, {0.6}, {0.88}, {1.22}, {0.75},
}};

constexpr double kGolden = 0.6180339887498949;
// Mean normalized log-mel values at which the mouth starts to open and is
// fully open.
constexpr double kClosedEnergy = 0.15;
constexpr double kFullOpenEnergy = 0.45;

std::string speaker_id(int index) { return "spk" + std::to_string(index); }

std::vector<int> random_phonemes(Rng& rng, int64_t frame_count) {
  std::vector<int> track;
  track.reserve(static_cast<size_t>(frame_count));
  while (static_cast<int64_t>(track.size()) < frame_count) {
    const bool silent = uniform01(rng) < 0.2 || track.empty();
    const int p = silent ? kSilence : static_cast<int>(uniform_int(rng, 1, kNumPhonemes - 1));
    const auto dur = silent ? uniform_int(rng, 1, 3) : uniform_int(rng, 2, 5);
    for (int64_t i = 0; i < dur && static_cast<int64_t>(track.size()) < frame_count; ++i) {
      track.push_back(p);
    }
  }
  return track;
}

// Per-sample amplitude envelope in [0, 1]: one syllable-like hump per
// phoneme segment, scaled by the phoneme's loudness.
std::vector<double> envelope(const std::vector<int>& track, int64_t num_samples) {
  std::vector<double> env(static_cast<size_t>(num_samples), 0.0);
  int64_t f = 0;
  const auto frames = static_cast<int64_t>(track.size());
  while (f < frames) {
    int64_t g = f;
    while (g < frames && track[g] == track[f]) ++g;
    const int64_t s0 = f * kSamplesPerFrame;
    const int64_t s1 = std::min(g * kSamplesPerFrame, num_samples);
    const double loud = kSounds[track[f]].loudness;
    const double len = static_cast<double>(s1 - s0);
    for (int64_t n = s0; n < s1; ++n) {
      const double x = (static_cast<double>(n - s0) + 0.5) / len;
      env[n] = loud * std::pow(std::sin(kPi * x), 0.6);
    }
    f = g;
  }
  return env;
}

void fill_ellipse(std::vector<double>& canvas, double cx, double cy, double rx, double ry,
                  const std::array<double, 3>& color) {
  constexpr int kSs = 2 * kFrameSize;  // 2x supersampled canvas
  if (rx <= 0 || ry <= 0) return;
  const int y0 = std::max(0, static_cast<int>(std::floor((cy - ry) * 2)));
  const int y1 = std::min(kSs - 1, static_cast<int>(std::ceil((cy + ry) * 2)));
  const int x0 = std::max(0, static_cast<int>(std::floor((cx - rx) * 2)));
  const int x1 = std::min(kSs - 1, static_cast<int>(std::ceil((cx + rx) * 2)));
  for (int y = y0; y <= y1; ++y) {
    const double py = (y + 0.5) / 2.0;
    for (int x = x0; x <= x1; ++x) {
      const double px = (x + 0.5) / 2.0;
      const double dx = (px - cx) / rx;
      const double dy = (py - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) {
        double* dst = canvas.data() + (static_cast<size_t>(y) * kSs + x) * 3;
        dst[0] = color[0];
        dst[1] = color[1];
        dst[2] = color[2];
      }
    }
  }
}

void render_frame(const FaceStyle& face, double aperture, int phoneme, uint8_t* out) {
  constexpr int kSs = 2 * kFrameSize;
  std::vector<double> canvas(static_cast<size_t>(kSs) * kSs * 3);
  for (size_t i = 0; i < canvas.size(); i += 3) {
    canvas[i] = face.background[0];
    canvas[i + 1] = face.background[1];
    canvas[i + 2] = face.background[2];
  }
  const double cx = kFrameSize / 2.0;
  fill_ellipse(canvas, cx, 50.0, face.face_rx, face.face_ry, face.skin);
  const std::array<double, 3> dark{0.08, 0.07, 0.07};
  fill_ellipse(canvas, cx - 14, 36, 4.5, 2.6, dark);
  fill_ellipse(canvas, cx + 14, 36, 4.5, 2.6, dark);
  std::array<double, 3> nose = face.skin;
  for (double& c : nose) c *= 0.8;
  fill_ellipse(canvas, cx, 54, 3.5, 2.5, nose);

  // Width keys the phoneme; height is scaled inversely so the opening area
  // depends on loudness alone.
  const Viseme v = kVisemes[phoneme];
  const double hw = face.mouth_half_width * v.width;
  const double hh = (1.2 + 13.0 * aperture) / v.width;
  fill_ellipse(canvas, cx, face.mouth_y, hw + 2.0, hh + 2.0, face.lips);
  const std::array<double, 3> teeth{0.97, 0.96, 0.93};
  fill_ellipse(canvas, cx, face.mouth_y, hw, hh - 0.9, teeth);

  for (int y = 0; y < kFrameSize; ++y) {
    for (int x = 0; x < kFrameSize; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            acc += canvas[(static_cast<size_t>(2 * y + dy) * kSs + (2 * x + dx)) * 3 + c];
          }
        }
        out[(static_cast<size_t>(y) * kFrameSize + x) * 3 + c] =
            static_cast<uint8_t>(std::lround(std::clamp(acc / 4.0, 0.0, 1.0) * 255.0));
      }
    }
  }
}

std::filesystem::path utterance_dir(const CorpusManifest& m, const UtteranceRecord& u) {
  return m.root / u.path;
}

std::string frame_name(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05lld.png", static_cast<long long>(i));
  return buf;
}

json face_to_json(const FaceStyle& f) {
  return json{{"skin", f.skin},           {"background", f.background},
              {"lips", f.lips},           {"face_rx", f.face_rx},
              {"face_ry", f.face_ry},     {"mouth_y", f.mouth_y},
              {"mouth_half_width", f.mouth_half_width}};
}

FaceStyle face_from_json(const json& j) {
  FaceStyle f;
  f.skin = j.at("skin").get<std::array<double, 3>>();
  f.background = j.at("background").get<std::array<double, 3>>();
  f.lips = j.at("lips").get<std::array<double, 3>>();
  f.face_rx = j.at("face_rx").get<double>();
  f.face_ry = j.at("face_ry").get<double>();
  f.mouth_y = j.at("mouth_y").get<double>();
  f.mouth_half_width = j.at("mouth_half_width").get<double>();
  return f;
}

}  // namespace

Frames Frames::slice(int64_t start, int64_t length) const {
  if (start < 0 || length < 0 || start + length > count) {
    throw InvalidArgument("frame slice out of range");
  }
  Frames out;
  out.count = length;
  out.pixels.assign(pixels.begin() + start * kFramePixels,
                    pixels.begin() + (start + length) * kFramePixels);
  return out;
}

const SpeakerRecord& CorpusManifest::speaker(const std::string& id) const {
  for (const auto& s : speakers) {
    if (s.id == id) return s;
  }
  throw InvalidArgument("unknown speaker: " + id);
}

const std::array<Viseme, kNumPhonemes>& viseme_table() { return kVisemes; }

SpeakerRecord make_speaker(uint64_t seed, int index) {
  Rng rng(derive_seed(seed, 0x5EA4E5, static_cast<uint64_t>(index)));
  Rng base(derive_seed(seed, 0xF0F0F0));
  SpeakerRecord s;
  s.id = speaker_id(index);
  // Low-discrepancy pitch assignment keeps nearby speaker ids well apart.
  const double offset = uniform01(base);
  const double frac = std::fmod(offset + index * kGolden, 1.0);
  s.f0_hz = 90.0 + 190.0 * frac;
  s.formant_scale = uniform(rng, 0.88, 1.12);
  s.tilt_hz = uniform(rng, 2500.0, 6000.0);
  s.level = uniform(rng, 0.55, 0.9);
  s.breathiness = uniform(rng, 0.004, 0.02);
  FaceStyle& f = s.face;
  const double tone = uniform(rng, 0.35, 0.65);
  f.skin = {tone + 0.1, tone * 0.82, tone * 0.68};
  for (double& c : f.skin) c = std::clamp(c, 0.0, 1.0);
  f.background = {uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)};
  const double lip_shade = uniform(rng, 0.78, 0.9);
  f.lips = {std::min(1.0, f.skin[0] * lip_shade * 1.1), f.skin[1] * lip_shade * 0.85,
            f.skin[2] * lip_shade * 0.9};
  f.face_rx = uniform(rng, 32.0, 40.0);
  f.face_ry = uniform(rng, 42.0, 47.0);
  f.mouth_y = uniform(rng, 68.0, 73.0);
  f.mouth_half_width = uniform(rng, 10.0, 15.0);
  return s;
}

Utterance render_utterance(const SpeakerRecord& speaker, uint64_t seed, int64_t frame_count,
                           const std::optional<std::vector<int>>& phonemes) {
  if (frame_count < 1) throw InvalidArgument("render_utterance: frame_count must be >= 1");
  Rng rng(seed);
  Utterance u;
  u.speaker_id = speaker.id;
  u.phoneme_track = phonemes ? *phonemes : random_phonemes(rng, frame_count);
  if (static_cast<int64_t>(u.phoneme_track.size()) != frame_count) {
    throw InvalidArgument("phoneme track length must equal frame count");
  }
  const int64_t num_samples = frame_count * kSamplesPerFrame;
  const auto env = envelope(u.phoneme_track, num_samples);

  // Slow intonation contour around the speaker's pitch.
  const double contour_phase = uniform(rng, 0.0, 2.0 * kPi);
  const double contour_rate = uniform(rng, 0.3, 0.8);
  Rng noise_rng(derive_seed(seed, 0xA0D10));

  std::vector<double> weights;
  u.audio.samples.resize(static_cast<size_t>(num_samples));
  double phase = 0.0;
  int last_phoneme = -1;
  double weight_sum = 1.0;
  int harmonics = 0;
  for (int64_t n = 0; n < num_samples; ++n) {
    const double t = static_cast<double>(n) / dsp::kSampleRate;
    const int p = u.phoneme_track[static_cast<size_t>(n / kSamplesPerFrame)];
    const double f0 =
        speaker.f0_hz * (1.0 + 0.03 * std::sin(2.0 * kPi * contour_rate * t + contour_phase));
    phase += 2.0 * kPi * f0 / dsp::kSampleRate;
    if (phase > 2.0 * kPi) phase -= 2.0 * kPi;
    double value = 0.0;
    if (p != kSilence && env[n] > 0.0) {
      if (p != last_phoneme) {
        const auto& snd = kSounds[p];
        harmonics = static_cast<int>(7600.0 / speaker.f0_hz);
        weights.assign(static_cast<size_t>(harmonics) + 1, 0.0);
        weight_sum = 0.0;
        for (int h = 1; h <= harmonics; ++h) {
          const double fh = h * speaker.f0_hz;
          const double f1 = snd.f1 * speaker.formant_scale;
          const double f2 = snd.f2 * speaker.formant_scale;
          const double w = (std::exp(-0.5 * std::pow((fh - f1) / 90.0, 2)) +
                            0.6 * std::exp(-0.5 * std::pow((fh - f2) / 130.0, 2)) + 0.03) *
                           std::exp(-fh / speaker.tilt_hz);
          weights[h] = w;
          weight_sum += w;
        }
        last_phoneme = p;
      }
      double acc = 0.0;
      for (int h = 1; h <= harmonics; ++h) acc += weights[h] * std::sin(h * phase);
      value = acc / weight_sum;
      const double noise_share = kSounds[p].noise;
      const double hiss = 2.0 * uniform01(noise_rng) - 1.0;
      value = (1.0 - noise_share) * value + noise_share * 0.5 * hiss + speaker.breathiness * hiss;
      value *= env[n];
    }
    value = value * speaker.level + 3e-4 * (2.0 * uniform01(noise_rng) - 1.0);
    u.audio.samples[n] = static_cast<float>(std::clamp(value, -1.0, 1.0));
  }

  u.mel = dsp::melspectrogram(u.audio);

  // Mouth opening tracks the loudness the spectrogram actually shows.
  u.frames.count = frame_count;
  u.frames.pixels.resize(static_cast<size_t>(frame_count * kFramePixels));
  for (int64_t f = 0; f < frame_count; ++f) {
    double energy = 0.0;
    int steps = 0;
    for (int64_t t = f * kStepsPerFrame; t < std::min((f + 1) * kStepsPerFrame, u.mel.num_steps); ++t) {
      for (int b = 0; b < dsp::kMelBands; ++b) energy += u.mel.at(t, b);
      steps += dsp::kMelBands;
    }
    const double mean = steps > 0 ? energy / steps : 0.0;
    const double aperture =
        std::clamp((mean - kClosedEnergy) / (kFullOpenEnergy - kClosedEnergy), 0.0, 1.0);
    render_frame(speaker.face, aperture, u.phoneme_track[f],
                 u.frames.pixels.data() + f * kFramePixels);
  }
  return u;
}

CorpusManifest generate_corpus(const GenerateOptions& options, const std::filesystem::path& root) {
  if (options.num_speakers < 1 || options.utts_per_speaker < 1) {
    throw InvalidArgument("generate_corpus: speaker and utterance counts must be >= 1");
  }
  if (options.utt_seconds < 1.0) throw InvalidArgument("generate_corpus: utt_seconds must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec || !std::filesystem::is_directory(root)) {
    throw IoError("cannot create corpus root: " + root.string());
  }
  {
    const auto probe = root / ".write_probe";
    std::ofstream p(probe);
    if (!p) throw IoError("corpus root not writable: " + root.string());
    p.close();
    std::filesystem::remove(probe, ec);
  }

  CorpusManifest m;
  m.root = root;
  m.seed = options.seed;
  m.utt_seconds = options.utt_seconds;
  const auto frame_count = static_cast<int64_t>(std::lround(options.utt_seconds * kFps));
  for (int k = 0; k < options.num_speakers; ++k) {
    m.speakers.push_back(make_speaker(options.seed, options.first_speaker + k));
  }
  for (int k = 0; k < options.num_speakers; ++k) {
    for (int j = 0; j < options.utts_per_speaker; ++j) {
      m.utterances.push_back({m.speakers[k].id, m.speakers[k].id + "/utt" + std::to_string(j),
                              frame_count});
    }
  }

  const auto total = static_cast<int64_t>(m.utterances.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < total; ++i) {
    try {
      const int k = static_cast<int>(i / options.utts_per_speaker);
      const int j = static_cast<int>(i % options.utts_per_speaker);
      const auto& spk = m.speakers[k];
      const uint64_t utt_seed =
          derive_seed(options.seed, 0x0777 + static_cast<uint64_t>(options.first_speaker + k),
                      static_cast<uint64_t>(j));
      const Utterance u = render_utterance(spk, utt_seed, frame_count);
      const auto dir = utterance_dir(m, m.utterances[i]);
      std::filesystem::create_directories(dir / "frames");
      for (int64_t f = 0; f < u.frames.count; ++f) {
        image::write_png_rgb(dir / "frames" / frame_name(f),
                             {u.frames.frame(f), static_cast<size_t>(kFramePixels)}, kFrameSize,
                             kFrameSize);
      }
      dsp::save_wav(u.audio, dir / "audio.wav");
      std::ofstream ph(dir / "phonemes.txt");
      for (int p : u.phoneme_track) ph << p << '\n';
      if (!ph) throw IoError("cannot write phoneme track in " + dir.string());
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  save_manifest(m);
  return m;
}

void save_manifest(const CorpusManifest& m) {
  json j;
  j["root"] = ".";
  j["seed"] = m.seed;
  j["utt_seconds"] = m.utt_seconds;
  j["speakers"] = json::array();
  for (const auto& s : m.speakers) {
    j["speakers"].push_back({{"id", s.id},
                             {"f0_hz", s.f0_hz},
                             {"formant_scale", s.formant_scale},
                             {"tilt_hz", s.tilt_hz},
                             {"level", s.level},
                             {"breathiness", s.breathiness},
                             {"face", face_to_json(s.face)}});
  }
  j["utterances"] = json::array();
  for (const auto& u : m.utterances) {
    j["utterances"].push_back(
        {{"speaker_id", u.speaker_id}, {"path", u.path}, {"frame_count", u.frame_count}});
  }
  std::ofstream out(m.root / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + m.root.string());
  out << j.dump(2) << '\n';
}

CorpusManifest load_manifest(const std::filesystem::path& root_or_file) {
  const auto file = std::filesystem::is_directory(root_or_file) ? root_or_file / "manifest.json"
                                                                : root_or_file;
  std::ifstream in(file);
  if (!in) throw IoError("cannot read manifest: " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CorruptData("malformed manifest " + file.string() + ": " + e.what());
  }
  CorpusManifest m;
  try {
    m.root = file.parent_path();
    if (m.root.empty()) m.root = ".";
    m.seed = j.at("seed").get<uint64_t>();
    m.utt_seconds = j.value("utt_seconds", 0.0);
    for (const auto& s : j.at("speakers")) {
      SpeakerRecord r;
      r.id = s.at("id").get<std::string>();
      r.f0_hz = s.at("f0_hz").get<double>();
      r.formant_scale = s.at("formant_scale").get<double>();
      r.tilt_hz = s.at("tilt_hz").get<double>();
      r.level = s.at("level").get<double>();
      r.breathiness = s.at("breathiness").get<double>();
      r.face = face_from_json(s.at("face"));
      m.speakers.push_back(std::move(r));
    }
    for (const auto& u : j.at("utterances")) {
      m.utterances.push_back({u.at("speaker_id").get<std::string>(), u.at("path").get<std::string>(),
                              u.at("frame_count").get<int64_t>()});
    }
  } catch (const json::exception& e) {
    throw CorruptData("manifest missing fields " + file.string() + ": " + e.what());
  }
  for (const auto& u : m.utterances) {
    if (u.frame_count < kWindowFrames) {
      throw CorruptData("utterance " + u.path + " has fewer than 25 frames");
    }
    if (!std::filesystem::exists(m.root / u.path)) {
      throw CorruptData("manifest references missing path " + u.path);
    }
  }
  return m;
}

CorpusManifest select_utterances(const CorpusManifest& manifest,
                                 const std::vector<std::string>& speaker_ids, double fraction,
                                 bool from_end) {
  if (fraction <= 0.0 || fraction > 1.0) throw InvalidArgument("fraction must be in (0, 1]");
  CorpusManifest out = manifest;
  out.speakers.clear();
  out.utterances.clear();
  for (const auto& id : speaker_ids) {
    out.speakers.push_back(manifest.speaker(id));
    std::vector<UtteranceRecord> own;
    for (const auto& u : manifest.utterances) {
      if (u.speaker_id == id) own.push_back(u);
    }
    const auto keep = static_cast<size_t>(std::ceil(fraction * static_cast<double>(own.size()) - 1e-9));
    const size_t first = from_end ? own.size() - keep : 0;
    out.utterances.insert(out.utterances.end(), own.begin() + first, own.begin() + first + keep);
  }
  return out;
}

Frames load_frames(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("no frame directory " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Frames frames;
  frames.count = static_cast<int64_t>(files.size());
  frames.pixels.resize(static_cast<size_t>(frames.count * kFramePixels));
  for (size_t f = 0; f < files.size(); ++f) {
    int w = 0, h = 0;
    const auto px = image::read_png_rgb(files[f], w, h);
    if (w != kFrameSize || h != kFrameSize) {
      throw CorruptData("frame " + files[f].string() + " is not 96x96");
    }
    std::copy(px.begin(), px.end(), frames.pixels.begin() + static_cast<int64_t>(f) * kFramePixels);
  }
  return frames;
}

void save_frames(const Frames& frames, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (int64_t f = 0; f < frames.count; ++f) {
    image::write_png_rgb(dir / frame_name(f), {frames.frame(f), static_cast<size_t>(kFramePixels)},
                         kFrameSize, kFrameSize);
  }
}

Utterance load_utterance(const CorpusManifest& m, size_t index) {
  const auto& rec = m.utterances.at(index);
  const auto dir = utterance_dir(m, rec);
  Utterance u;
  u.speaker_id = rec.speaker_id;
  u.frames = load_frames(dir / "frames");
  if (u.frames.count != rec.frame_count) {
    throw CorruptData("frame count mismatch in " + dir.string());
  }
  u.audio = dsp::load_wav(dir / "audio.wav");
  std::ifstream ph(dir / "phonemes.txt");
  if (!ph) throw IoError("missing phoneme track in " + dir.string());
  int p = 0;
  while (ph >> p) u.phoneme_track.push_back(p);
  if (static_cast<int64_t>(u.phoneme_track.size()) != rec.frame_count) {
    throw CorruptData("phoneme track length mismatch in " + dir.string());
  }
  const auto expected = rec.frame_count * kSamplesPerFrame;
  if (std::abs(static_cast<int64_t>(u.audio.samples.size()) - expected) > kSamplesPerFrame) {
    throw CorruptData("audio duration does not match frame count in " + dir.string());
  }
  u.audio.samples.resize(static_cast<size_t>(expected), 0.0f);
  u.mel = dsp::melspectrogram(u.audio);
  return u;
}

CorpusData load_corpus(const CorpusManifest& manifest) {
  if (manifest.utterances.empty()) throw InvalidArgument("empty manifest");
  CorpusData data;
  data.manifest = manifest;
  data.utterances.resize(manifest.utterances.size());
  const auto n = static_cast<int64_t>(manifest.utterances.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < n; ++i) {
    try {
      data.utterances[i] = load_utterance(manifest, static_cast<size_t>(i));
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return data;
}

TrainingExample sample_window(const Utterance& utt, Rng& rng) {
  if (utt.frames.count < kWindowFrames) {
    throw InvalidArgument("utterance shorter than 25 frames");
  }
  TrainingExample ex;
  ex.speaker_id = utt.speaker_id;
  ex.start_frame = uniform_int(rng, 0, utt.frames.count - kWindowFrames);
  ex.lips = utt.frames.slice(ex.start_frame, kWindowFrames);
  ex.mel = dsp::mel_segment(utt.mel, ex.start_frame * kStepsPerFrame, kWindowSteps);
  ex.ref_start_step = uniform_int(rng, 0, utt.mel.num_steps - kWindowSteps);
  ex.speaker_ref_mel = dsp::mel_segment(utt.mel, ex.ref_start_step, kWindowSteps);
  const auto first = utt.audio.samples.begin() + ex.ref_start_step * dsp::kHop;
  ex.speaker_ref.samples.assign(first, first + dsp::kSampleRate);
  return ex;
}

BatchIterator::BatchIterator(const CorpusData& data, int batch_size, uint64_t seed)
    : data_(&data), batch_size_(batch_size), seed_(seed) {
  if (data.utterances.empty()) throw InvalidArgument("BatchIterator: empty manifest");
  if (batch_size < 1) throw InvalidArgument("BatchIterator: batch size must be >= 1");
}

int64_t BatchIterator::batches_per_epoch() const {
  return static_cast<int64_t>(data_->utterances.size()) / batch_size_;
}

std::vector<Batch> BatchIterator::epoch(int64_t index) const {
  Rng rng(derive_seed(seed_, 0xE90C, static_cast<uint64_t>(index)));
  std::vector<size_t> order(data_->utterances.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  const int64_t nb = batches_per_epoch();
  for (int64_t b = 0; b < nb; ++b) {
    Batch batch;
    for (int i = 0; i < batch_size_; ++i) {
      batch.push_back(sample_window(data_->utterances[order[b * batch_size_ + i]], rng));
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

Batch BatchIterator::next() {
  if (batches_per_epoch() == 0) throw InvalidArgument("BatchIterator: no full batch per epoch");
  while (cursor_batch_ >= pending_.size()) {
    pending_ = epoch(cursor_epoch_++);
    cursor_batch_ = 0;
  }
  return std::move(pending_[cursor_batch_++]);
}

std::vector<double> mouth_intensity(const Frames& frames, const SpeakerRecord& speaker) {
  const int cy = static_cast<int>(std::lround(speaker.face.mouth_y));
  const int y0 = std::max(0, cy - 14), y1 = std::min(kFrameSize - 1, cy + 14);
  const int x0 = kFrameSize / 2 - 22, x1 = kFrameSize / 2 + 22;
  std::vector<double> out(static_cast<size_t>(frames.count));
  for (int64_t f = 0; f < frames.count; ++f) {
    const uint8_t* px = frames.frame(f);
    double acc = 0.0;
    int n = 0;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        for (int c = 0; c < 3; ++c) acc += px[(y * kFrameSize + x) * 3 + c];
        n += 3;
      }
    }
    out[f] = acc / (255.0 * n);
  }
  return out;
}

}  // namespace lipvox::corpus
