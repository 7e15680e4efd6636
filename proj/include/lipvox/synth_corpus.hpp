#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lipvox/audio_dsp.hpp"
#include "lipvox/rng.hpp"

namespace lipvox::corpus {

inline constexpr int kFps = 25;
inline constexpr int kFrameSize = 96;
inline constexpr int kChannels = 3;
inline constexpr int64_t kFramePixels = int64_t{kFrameSize} * kFrameSize * kChannels;
inline constexpr int kWindowFrames = 25;                    // T
inline constexpr int kStepsPerFrame = dsp::kSampleRate / kFps / dsp::kHop;  // 4
inline constexpr int kWindowSteps = kWindowFrames * kStepsPerFrame;        // T' = 100
inline constexpr int kSamplesPerFrame = dsp::kSampleRate / kFps;           // 640
inline constexpr int kNumPhonemes = 12;
inline constexpr int kSilence = 0;

// Frame sequence stored as 8-bit RGB (F x 96 x 96 x 3); real values are
// pixel / 255, hence always in [0, 1].
struct Frames {
  int64_t count = 0;
  std::vector<uint8_t> pixels;

  const uint8_t* frame(int64_t i) const { return pixels.data() + i * kFramePixels; }
  Frames slice(int64_t start, int64_t length) const;
};

struct FaceStyle {
  std::array<double, 3> skin{};
  std::array<double, 3> background{};
  std::array<double, 3> lips{};
  double face_rx = 0, face_ry = 0;
  double mouth_y = 0;
  double mouth_half_width = 0;
};

struct SpeakerRecord {
  std::string id;
  double f0_hz = 0;         // fundamental frequency
  double formant_scale = 1;  // vocal-tract length proxy
  double tilt_hz = 4000;     // spectral roll-off
  double level = 0.8;        // peak amplitude
  double breathiness = 0.01; // aspiration noise amplitude
  FaceStyle face;
};

struct UtteranceRecord {
  std::string speaker_id;
  std::string path;  // relative to the manifest root
  int64_t frame_count = 0;
};

struct CorpusManifest {
  std::filesystem::path root;
  std::vector<SpeakerRecord> speakers;
  std::vector<UtteranceRecord> utterances;
  uint64_t seed = 0;
  double utt_seconds = 0;

  const SpeakerRecord& speaker(const std::string& id) const;
};

struct GenerateOptions {
  int num_speakers = 4;
  int utts_per_speaker = 8;
  double utt_seconds = 3.0;
  uint64_t seed = 7;
  // Index of the first speaker; lets disjoint corpora share one speaker
  // space (spk{first}..spk{first+num-1}).
  int first_speaker = 0;
};

// Mouth width scale per phoneme. Phonemes 1 and 2 share one shape but
// sound different.
struct Viseme {
  double width;
};
const std::array<Viseme, kNumPhonemes>& viseme_table();

SpeakerRecord make_speaker(uint64_t seed, int index);

CorpusManifest generate_corpus(const GenerateOptions& options, const std::filesystem::path& root);

void save_manifest(const CorpusManifest& manifest);
CorpusManifest load_manifest(const std::filesystem::path& root_or_file);

// Restricts a manifest to the given speakers and keeps the first
// ceil(fraction * n) utterances of each.
CorpusManifest select_utterances(const CorpusManifest& manifest,
                                 const std::vector<std::string>& speaker_ids,
                                 double fraction = 1.0, bool from_end = false);

struct Utterance {
  std::string speaker_id;
  Frames frames;
  dsp::Waveform audio;
  std::vector<int> phoneme_track;  // one label per frame
  dsp::MelSpectrogram mel;         // melspectrogram(audio), cached
};

Utterance load_utterance(const CorpusManifest& manifest, size_t index);

// All *.png files of a directory in name order.
Frames load_frames(const std::filesystem::path& dir);
void save_frames(const Frames& frames, const std::filesystem::path& dir);

// Synthesizes an utterance in memory without touching disk. `phonemes`
// overrides the random phoneme track when given (one label per frame).
Utterance render_utterance(const SpeakerRecord& speaker, uint64_t seed, int64_t frame_count,
                           const std::optional<std::vector<int>>& phonemes = std::nullopt);

struct CorpusData {
  CorpusManifest manifest;
  std::vector<Utterance> utterances;
};

CorpusData load_corpus(const CorpusManifest& manifest);

struct TrainingExample {
  Frames lips;                  // 25 frames
  dsp::MelSpectrogram mel;      // 100 steps aligned with lips
  dsp::Waveform speaker_ref;    // 1 s, independent random position
  dsp::MelSpectrogram speaker_ref_mel;
  std::string speaker_id;
  int64_t start_frame = 0;
  int64_t ref_start_step = 0;
};

// Mel rows are sliced from the cached full-utterance spectrogram at
// 4 * start, so analysis frames at the window edges see real context.
TrainingExample sample_window(const Utterance& utt, Rng& rng);

using Batch = std::vector<TrainingExample>;

// Seeded epochs: every utterance contributes one window per epoch in a
// shuffled order; the trailing partial batch is dropped. epoch(e) is a pure
// function of (corpus, batch size, seed, e).
class BatchIterator {
 public:
  BatchIterator(const CorpusData& data, int batch_size, uint64_t seed);

  int64_t batches_per_epoch() const;
  std::vector<Batch> epoch(int64_t index) const;

  // Streams batches epoch after epoch.
  Batch next();

 private:
  const CorpusData* data_;
  int batch_size_;
  uint64_t seed_;
  int64_t cursor_epoch_ = 0;
  size_t cursor_batch_ = 0;
  std::vector<Batch> pending_;
};

// Mean intensity of the mouth region in each frame.
std::vector<double> mouth_intensity(const Frames& frames, const SpeakerRecord& speaker);

}  // namespace lipvox::corpus
