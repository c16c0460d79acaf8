#include "avfuse/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "avfuse/error.hpp"
#include "avfuse/model.hpp"
#include "avfuse/rng.hpp"

namespace avf {

using nlohmann::json;

const char* to_string(Language lang) { return lang == Language::kEnglish ? "en" : "zh"; }

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

Language parse_language(const std::string& s) {
  if (s == "en") return Language::kEnglish;
  if (s == "zh") return Language::kChinese;
  throw ConfigError("unknown language '" + s + "' (expected en|zh)");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev") return Split::kDev;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "' (expected train|dev|test)");
}

// ---- cues -----------------------------------------------------------------------------

namespace {

void check_cue(const SubtitleCue& cue) {
  if (!std::isfinite(cue.start) || !std::isfinite(cue.end)) {
    throw ValidationError("cue times must be finite");
  }
  if (cue.start < 0.0 || cue.end < 0.0) throw ValidationError("cue times must be non-negative");
  if (cue.end < cue.start) {
    throw ValidationError("cue ends (" + std::to_string(cue.end) + ") before it starts (" +
                          std::to_string(cue.start) + ")");
  }
}

}  // namespace

std::int64_t middle_frame_index(const SubtitleCue& cue, double fps) {
  if (!(fps > 0.0)) throw ConfigError("fps must be positive");
  check_cue(cue);
  return static_cast<std::int64_t>(std::floor((cue.start + cue.end) / 2.0 * fps));
}

ClipBounds audio_clip_bounds(const SubtitleCue& cue, double sample_rate) {
  if (!(sample_rate > 0.0)) throw ConfigError("sample rate must be positive");
  check_cue(cue);
  ClipBounds b;
  b.begin = static_cast<std::int64_t>(std::floor(cue.start * sample_rate));
  b.end = static_cast<std::int64_t>(std::ceil(cue.end * sample_rate));
  b.empty = b.end == b.begin;
  return b;
}

std::vector<SubtitleCue> parse_cues(std::string_view text, Language language) {
  std::vector<SubtitleCue> cues;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string line(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int i = 0; i < 3; ++i) {
      const std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) throw ParseError("expected 4 tab-separated fields", line_no);
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    fields.push_back(line.substr(start));
    SubtitleCue cue;
    cue.source_id = fields[0];
    cue.text = fields[3];
    cue.language = language;
    if (cue.source_id.empty()) throw ParseError("empty source id", line_no);
    try {
      std::size_t used = 0;
      cue.start = std::stod(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing characters");
      cue.end = std::stod(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ParseError("bad time value", line_no);
    }
    try {
      check_cue(cue);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
    cues.push_back(std::move(cue));
    if (eol == text.size()) break;
  }
  return cues;
}

std::vector<SubtitleCue> read_cue_file(const std::string& path, Language language) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open cue file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_cues(ss.str(), language);
}

// ---- text --------------------------------------------------------------------------------

namespace {

// Decodes one code point; malformed sequences yield U+FFFD and advance a byte.
char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int need = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    need = 1;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    need = 2;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    need = 3;
    cp = b0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k <= need; ++k) {
    const int c = cont(k);
    if (c < 0) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  i += need + 1;
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x20000 && c <= 0x2EBEF) ||
         (c >= 0x3040 && c <= 0x30FF && c != 0x30FB && c != 0x30FC) ||
         (c >= 0xAC00 && c <= 0xD7AF);
}

bool is_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' ||
         c == 0x3000 || c == 0x00A0;
}

}  // namespace

std::string normalize_text(std::string_view s, Language lang) {
  std::string out;
  bool pending_space = false;
  for (std::size_t i = 0; i < s.size();) {
    char32_t c = next_code_point(s, i);
    if (c >= 0xFF01 && c <= 0xFF5E) c -= 0xFEE0;
    if (c >= 'A' && c <= 'Z') c += 'a' - 'A';
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    const bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || is_cjk(c);
    if (!keep) continue;
    if (pending_space && lang == Language::kEnglish) out.push_back(' ');
    pending_space = false;
    append_utf8(out, c);
  }
  return out;
}

std::vector<std::string> text_units(std::string_view normalized, Language lang) {
  std::vector<std::string> units;
  if (lang == Language::kEnglish) {
    std::size_t start = 0;
    while (start < normalized.size()) {
      std::size_t end = normalized.find_first_of(" \t\r\n", start);
      if (end == std::string_view::npos) end = normalized.size();
      if (end > start) units.emplace_back(normalized.substr(start, end - start));
      start = end + 1;
    }
  } else {
    for (std::size_t i = 0; i < normalized.size();) {
      const std::size_t begin = i;
      const char32_t c = next_code_point(normalized, i);
      if (!is_space(c)) units.emplace_back(normalized.substr(begin, i - begin));
    }
  }
  return units;
}

// ---- records -------------------------------------------------------------------------------

Tensor FeatureMatrix::tensor() const { return Tensor::from({rows, cols}, values); }

ModelInput model_input(const SampleRecord& r) {
  ModelInput in;
  in.audio = r.audio.tensor();
  if (r.visual.rows > 0) in.visual = r.visual.tensor();
  return in;
}

// ---- splits --------------------------------------------------------------------------------

std::map<std::string, Split> split_by_source(const std::vector<SampleRecord>& records,
                                             const SplitRatios& ratios, std::uint64_t seed) {
  const double total_ratio = ratios.train + ratios.dev + ratios.test;
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 || std::abs(total_ratio - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records) ++counts[r.source_id];
  if (counts.size() < 3) {
    throw ConfigError("need at least 3 sources to split, got " + std::to_string(counts.size()));
  }
  std::vector<std::string> sources;
  for (const auto& [id, n] : counts) sources.push_back(id);
  std::shuffle(sources.begin(), sources.end(), std::mt19937_64(derive_seed(seed, "split")));

  const double n = static_cast<double>(records.size());
  const double target[3] = {ratios.train * n, ratios.dev * n, ratios.test * n};
  double filled[3] = {0, 0, 0};
  std::map<std::string, Split> out;
  for (const auto& id : sources) {
    int best = 0;
    for (int s = 1; s < 3; ++s) {
      if (target[s] - filled[s] > target[best] - filled[best]) best = s;
    }
    filled[best] += static_cast<double>(counts[id]);
    out[id] = static_cast<Split>(best);
  }
  return out;
}

void apply_split(std::vector<SampleRecord>& records, const std::map<std::string, Split>& assignment) {
  for (auto& r : records) {
    const auto it = assignment.find(r.source_id);
    if (it == assignment.end()) throw ContractError("source '" + r.source_id + "' has no split");
    r.split = it->second;
  }
}

std::string SubsetSpec::expression() const {
  std::ostringstream os;
  os << "split=" << to_string(split) << " fraction=" << fraction << " seed=" << seed;
  return os.str();
}

std::vector<std::size_t> select_subset(const std::vector<SampleRecord>& records, const SubsetSpec& spec) {
  if (!(spec.fraction > 0.0) || spec.fraction > 1.0) {
    throw ConfigError("subset fraction must lie in (0, 1]");
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == spec.split) pool.push_back(i);
  }
  std::shuffle(pool.begin(), pool.end(), std::mt19937_64(derive_seed(spec.seed, "subset")));
  const auto take = static_cast<std::size_t>(std::ceil(spec.fraction * static_cast<double>(pool.size())));
  pool.resize(std::min(take, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

// ---- synthetic task --------------------------------------------------------------------------

void SynthTaskConfig::validate() const {
  if (vocab < static_cast<std::size_t>(kFirstContentToken) + 2) {
    throw ConfigError("synthetic vocabulary needs at least two content tokens");
  }
  if (min_length < 1 || max_length < min_length) throw ConfigError("invalid target length range");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  prob(audio_corruption, "audio corruption");
  prob(visual_corruption, "visual corruption");
  if (!(audio_noise >= 0.0)) throw ConfigError("audio noise must be non-negative");
  if (audio_width == 0 || visual_width == 0 || repeats == 0) {
    throw ConfigError("feature widths and repeats must be positive");
  }
  if (successors > vocab - kFirstContentToken) throw ConfigError("too many successors");
}

namespace {

constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
constexpr std::size_t kSyllables = std::size(kOnsets) * std::size(kVowels);

std::string syllable(std::size_t k) {
  return std::string(kOnsets[k / std::size(kVowels)]) + kVowels[k % std::size(kVowels)];
}

struct TaskTables {
  std::vector<double> audio;   // [V × d_a]
  std::vector<double> visual;  // [V × d_v]
  std::vector<std::vector<int>> successors;
};

TaskTables task_tables(const SynthTaskConfig& cfg) {
  TaskTables t;
  Rng audio_rng(derive_seed(cfg.embedding_seed, "audio-embedding"));
  t.audio.resize(cfg.vocab * cfg.audio_width);
  for (double& v : t.audio) v = audio_rng.normal(0.0, 1.0);
  Rng visual_rng(derive_seed(cfg.embedding_seed, "visual-embedding"));
  t.visual.resize(cfg.vocab * cfg.visual_width);
  for (double& v : t.visual) v = visual_rng.normal(0.0, 1.0);
  if (cfg.successors > 0) {
    Rng succ_rng(derive_seed(cfg.embedding_seed, "successors"));
    std::vector<int> content(cfg.vocab - kFirstContentToken);
    std::iota(content.begin(), content.end(), kFirstContentToken);
    t.successors.resize(cfg.vocab);
    for (std::size_t tok = kFirstContentToken; tok < cfg.vocab; ++tok) {
      std::shuffle(content.begin(), content.end(), succ_rng.engine());
      t.successors[tok].assign(content.begin(), content.begin() + cfg.successors);
    }
  }
  return t;
}

int other_token(int original, std::size_t vocab, Rng& rng) {
  const auto choices = vocab - kFirstContentToken - 1;
  int pick = kFirstContentToken + static_cast<int>(rng.index(choices));
  if (pick >= original) ++pick;
  return pick;
}

}  // namespace

Vocabulary::Vocabulary(std::size_t size, Language lang) : size_(size), lang_(lang) {
  if (lang == Language::kEnglish && size - kFirstContentToken > kSyllables * kSyllables) {
    throw ConfigError("vocabulary too large for the word renderer");
  }
  for (std::size_t id = kFirstContentToken; id < size; ++id) {
    lookup_[token_text(static_cast<int>(id))] = static_cast<int>(id);
  }
}

std::string Vocabulary::token_text(int id) const {
  if (id < kFirstContentToken || static_cast<std::size_t>(id) >= size_) return "";
  const auto k = static_cast<std::size_t>(id - kFirstContentToken);
  if (lang_ == Language::kEnglish) return syllable(k / kSyllables) + syllable(k % kSyllables);
  std::string out;
  append_utf8(out, static_cast<char32_t>(0x4E00 + k));
  return out;
}

std::string Vocabulary::render(const std::vector<int>& tokens) const {
  std::string out;
  for (int t : tokens) {
    const std::string w = token_text(t);
    if (w.empty()) continue;
    if (lang_ == Language::kEnglish && !out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::vector<int> Vocabulary::parse(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& unit : text_units(text, lang_)) {
    const auto it = lookup_.find(unit);
    if (it != lookup_.end()) ids.push_back(it->second);
  }
  return ids;
}

SampleRecord generate_synthetic(const SynthTaskConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const TaskTables tables = task_tables(cfg);
  Rng rng(seed);
  SampleRecord r;
  r.seed = seed;
  r.language = cfg.language;
  const std::size_t length = cfg.min_length + rng.index(cfg.max_length - cfg.min_length + 1);
  const std::size_t content = cfg.vocab - kFirstContentToken;
  for (std::size_t i = 0; i < length; ++i) {
    int tok;
    if (i > 0 && cfg.successors > 0) {
      const auto& next = tables.successors[r.tokens.back()];
      tok = next[rng.index(next.size())];
    } else {
      tok = kFirstContentToken + static_cast<int>(rng.index(content));
    }
    r.tokens.push_back(tok);
  }
  for (int tok : r.tokens) {
    r.audio_tokens.push_back(rng.bernoulli(cfg.audio_corruption) ? other_token(tok, cfg.vocab, rng) : tok);
  }
  for (int tok : r.tokens) {
    r.visual_tokens.push_back(rng.bernoulli(cfg.visual_corruption) ? other_token(tok, cfg.vocab, rng) : tok);
  }
  r.audio.rows = length * cfg.repeats;
  r.audio.cols = cfg.audio_width;
  r.audio.values.reserve(r.audio.rows * r.audio.cols);
  for (int tok : r.audio_tokens) {
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
      for (std::size_t c = 0; c < cfg.audio_width; ++c) {
        const double noise = cfg.audio_noise > 0.0 ? rng.normal(0.0, cfg.audio_noise) : 0.0;
        r.audio.values.push_back(tables.audio[tok * cfg.audio_width + c] + noise);
      }
    }
  }
  r.visual.rows = length;
  r.visual.cols = cfg.visual_width;
  for (int tok : r.visual_tokens) {
    const auto row = tables.visual.begin() + static_cast<std::ptrdiff_t>(tok * cfg.visual_width);
    r.visual.values.insert(r.visual.values.end(), row, row + static_cast<std::ptrdiff_t>(cfg.visual_width));
  }
  r.text = Vocabulary(cfg.vocab, cfg.language).render(r.tokens);
  return r;
}

std::vector<SampleRecord> generate_corpus(const SynthTaskConfig& task, const CorpusConfig& corpus,
                                          std::uint64_t seed) {
  if (corpus.samples == 0 || corpus.sources == 0) {
    throw ConfigError("corpus needs at least one sample and one source");
  }
  std::vector<SampleRecord> records;
  records.reserve(corpus.samples);
  const int width = static_cast<int>(std::to_string(corpus.samples - 1).size());
  const int source_width = static_cast<int>(std::to_string(corpus.sources - 1).size());
  for (std::size_t i = 0; i < corpus.samples; ++i) {
    SampleRecord r = generate_synthetic(task, derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::string idx = std::to_string(i);
    std::string src = std::to_string(i % corpus.sources);
    r.id = "utt" + std::string(width - idx.size(), '0') + idx;
    r.source_id = "src" + std::string(source_width - src.size(), '0') + src;
    records.push_back(std::move(r));
  }
  apply_split(records, split_by_source(records, corpus.ratios, seed));
  return records;
}

std::vector<SampleRecord> records_in(const std::vector<SampleRecord>& records, Split split) {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

// ---- manifests ----------------------------------------------------------------------------------

namespace {

json matrix_json(const FeatureMatrix& m) {
  return {{"rows", m.rows}, {"cols", m.cols}, {"values", m.values}};
}

FeatureMatrix matrix_from(const json& j) {
  FeatureMatrix m;
  m.rows = j.at("rows");
  m.cols = j.at("cols");
  m.values = j.at("values").get<std::vector<double>>();
  if (m.values.size() != m.rows * m.cols) throw std::invalid_argument("feature matrix size mismatch");
  return m;
}

}  // namespace

std::string record_to_json(const SampleRecord& r) {
  const json j = {{"id", r.id},
                  {"source_id", r.source_id},
                  {"language", to_string(r.language)},
                  {"split", to_string(r.split)},
                  {"seed", r.seed},
                  {"text", r.text},
                  {"tokens", r.tokens},
                  {"audio_tokens", r.audio_tokens},
                  {"visual_tokens", r.visual_tokens},
                  {"audio", matrix_json(r.audio)},
                  {"visual", matrix_json(r.visual)}};
  return j.dump();
}

SampleRecord record_from_json(std::string_view line) {
  const json j = json::parse(line);
  SampleRecord r;
  r.id = j.at("id");
  r.source_id = j.at("source_id");
  r.language = parse_language(j.at("language"));
  r.split = parse_split(j.at("split"));
  r.seed = j.at("seed");
  r.text = j.at("text");
  r.tokens = j.at("tokens").get<std::vector<int>>();
  r.audio_tokens = j.at("audio_tokens").get<std::vector<int>>();
  r.visual_tokens = j.at("visual_tokens").get<std::vector<int>>();
  r.audio = matrix_from(j.at("audio"));
  r.visual = matrix_from(j.at("visual"));
  return r;
}

std::vector<SampleRecord> parse_manifest(std::string_view text) {
  std::vector<SampleRecord> records;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(line));
    } catch (const std::exception& e) {
      throw ParseError(std::string("malformed manifest record: ") + e.what(), line_no);
    }
  }
  return records;
}

void write_manifest(const std::string& path, const std::vector<SampleRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write manifest " + path);
  for (const auto& r : records) os << record_to_json(r) << '\n';
  if (!os) throw IoError("failed writing manifest " + path);
}

std::vector<SampleRecord> read_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open manifest " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str());
}

}  // namespace avf
