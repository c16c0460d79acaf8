#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "avfuse/model.hpp"
#include "avfuse/tensor.hpp"

namespace avf {

enum class Language { kEnglish, kChinese };
enum class Split { kTrain, kDev, kTest };

const char* to_string(Language lang);
const char* to_string(Split split);
Language parse_language(const std::string& s);
Split parse_split(const std::string& s);

// ---- subtitle cues --------------------------------------------------------------

struct SubtitleCue {
  std::string source_id;
  double start = 0.0;  // seconds
  double end = 0.0;
  std::string text;
  Language language = Language::kEnglish;
};

// floor(((t_s + t_e) / 2) · fps).
std::int64_t middle_frame_index(const SubtitleCue& cue, double fps);

struct ClipBounds {
  std::int64_t begin = 0;  // first sample
  std::int64_t end = 0;    // one past the last sample
  bool empty = false;      // zero-length cue; callers should warn
};

// (floor(t_s · sr), ceil(t_e · sr)).
ClipBounds audio_clip_bounds(const SubtitleCue& cue, double sample_rate);

// One cue per line: source_id <TAB> t_s <TAB> t_e <TAB> text.
std::vector<SubtitleCue> parse_cues(std::string_view text, Language language);
std::vector<SubtitleCue> read_cue_file(const std::string& path, Language language);

// ---- text -----------------------------------------------------------------------

// Full-width ASCII forms fold to half-width, ASCII letters are lowercased,
// everything except [a-z0-9], CJK and whitespace is dropped, and whitespace is
// collapsed to single spaces (en) or removed (zh).
std::string normalize_text(std::string_view s, Language lang);

// Scoring units: space-separated words (en) or code points (zh).
std::vector<std::string> text_units(std::string_view normalized, Language lang);

// ---- records ----------------------------------------------------------------------

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Tensor tensor() const;
  bool operator==(const FeatureMatrix&) const = default;
};

struct SampleRecord {
  std::string id;
  std::string source_id;
  Language language = Language::kEnglish;
  std::string text;
  std::vector<int> tokens;        // target ids, without BOS/EOS
  std::vector<int> audio_tokens;  // ids actually rendered into the audio track
  std::vector<int> visual_tokens;
  FeatureMatrix audio;   // [T × d_a]
  FeatureMatrix visual;  // [Lv × d_v]
  Split split = Split::kTrain;
  std::uint64_t seed = 0;

  bool operator==(const SampleRecord&) const = default;
};

// Audio and visual features as model inputs (every visual row valid).
ModelInput model_input(const SampleRecord& r);

// ---- splits ---------------------------------------------------------------------------

struct SplitRatios {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

// Whole sources go to one split. Sources are shuffled by seed and each is
// placed in the split furthest below its target record count (ties: train,
// dev, test).
std::map<std::string, Split> split_by_source(const std::vector<SampleRecord>& records,
                                             const SplitRatios& ratios, std::uint64_t seed);
void apply_split(std::vector<SampleRecord>& records, const std::map<std::string, Split>& assignment);

struct SubsetSpec {
  Split split = Split::kTrain;
  double fraction = 0.1;
  std::uint64_t seed = 0;

  std::string expression() const;
};

// Indices of ceil(fraction · n) records of the chosen split, drawn by seed and
// returned in manifest order.
std::vector<std::size_t> select_subset(const std::vector<SampleRecord>& records, const SubsetSpec& spec);

// ---- synthetic task ---------------------------------------------------------------------

struct SynthTaskConfig {
  std::size_t vocab = 64;  // including the three reserved ids
  std::size_t min_length = 4;
  std::size_t max_length = 8;
  double audio_corruption = 0.3;   // p
  double audio_noise = 0.5;        // σ_a
  double visual_corruption = 0.0;  // p_v
  std::size_t audio_width = 32;    // d_a
  std::size_t visual_width = 48;   // d_v
  std::size_t repeats = 4;         // audio frames per token
  // > 0: each token may only be followed by this many fixed successors.
  std::size_t successors = 0;
  Language language = Language::kEnglish;
  std::uint64_t embedding_seed = 7;  // fixes the frozen token embeddings

  void validate() const;
};

// Renders token ids as text and back. Content ids map to distinct two-syllable
// words (en) or distinct CJK characters (zh).
class Vocabulary {
 public:
  Vocabulary(std::size_t size, Language lang);

  std::string token_text(int id) const;
  std::string render(const std::vector<int>& tokens) const;
  // Inverse of render for normalized text; unknown units are skipped.
  std::vector<int> parse(std::string_view text) const;
  std::size_t size() const { return size_; }
  Language language() const { return lang_; }

 private:
  std::size_t size_;
  Language lang_;
  std::map<std::string, int> lookup_;
};

// Pure function of (cfg, seed).
SampleRecord generate_synthetic(const SynthTaskConfig& cfg, std::uint64_t seed);

struct CorpusConfig {
  std::size_t samples = 1000;
  std::size_t sources = 50;
  SplitRatios ratios;
};

// Record i uses seed derive_seed(seed, i) and belongs to source i mod sources;
// splits are assigned by source.
std::vector<SampleRecord> generate_corpus(const SynthTaskConfig& task, const CorpusConfig& corpus,
                                          std::uint64_t seed);

std::vector<SampleRecord> records_in(const std::vector<SampleRecord>& records, Split split);

// ---- manifests ----------------------------------------------------------------------------

std::string record_to_json(const SampleRecord& r);
SampleRecord record_from_json(std::string_view line);

void write_manifest(const std::string& path, const std::vector<SampleRecord>& records);
std::vector<SampleRecord> read_manifest(const std::string& path);
std::vector<SampleRecord> parse_manifest(std::string_view text);

}  // namespace avf
