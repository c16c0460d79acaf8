#pragma once

#include <string>
#include <vector>

#include "avfuse/data.hpp"
#include "avfuse/model.hpp"

namespace avf {

struct EditOps {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;

  std::size_t distance() const { return substitutions + insertions + deletions; }
  bool operator==(const EditOps&) const = default;
};

// Unit-cost Levenshtein alignment. The backtrace prefers a substitution (or
// match), then a deletion, then an insertion.
EditOps edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);
EditOps edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp);

enum class ScoringUnit { kWord, kChar };

const char* to_string(ScoringUnit unit);
ScoringUnit unit_for(Language lang);
std::vector<std::string> split_units(const std::string& text, ScoringUnit unit);

// Corpus-level rate: Σ distance / Σ reference length.
double error_rate(const std::vector<std::string>& refs, const std::vector<std::string>& hyps,
                  ScoringUnit unit);

struct SampleScore {
  std::string id;
  std::string reference;   // normalized
  std::string hypothesis;  // normalized
  std::vector<int> hypothesis_tokens;
  EditOps ops;
  std::size_t reference_units = 0;
};

struct EvalReport {
  ScoringUnit unit = ScoringUnit::kWord;
  double rate = 0.0;
  std::size_t total_distance = 0;
  std::size_t total_reference_units = 0;
  std::vector<SampleScore> samples;
};

// Greedy-decodes every record, renders and normalizes hypothesis and
// reference, and pools edit counts over the corpus.
EvalReport evaluate_model(const Model& model, const std::vector<SampleRecord>& records,
                          const Vocabulary& vocab, std::size_t max_len);
EvalReport score_hypotheses(const std::vector<SampleRecord>& records,
                            const std::vector<std::vector<int>>& hypotheses, const Vocabulary& vocab);

// Per-sample lines followed by one summary line.
std::string eval_report_jsonl(const EvalReport& report, const std::string& config_echo);
void write_eval_report(const std::string& path, const EvalReport& report, const std::string& config_echo);

}  // namespace avf
