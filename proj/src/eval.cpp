#include "avfuse/eval.hpp"

#include <json.hpp>

#include <fstream>

#include "avfuse/error.hpp"

namespace avf {

using nlohmann::json;

namespace {

template <typename T>
EditOps align(const std::vector<T>& ref, const std::vector<T>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  EditOps ops;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        if (!same) ++ops.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++ops.deletions;
      --i;
    } else {
      ++ops.insertions;
      --j;
    }
  }
  return ops;
}

}  // namespace

EditOps edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  return align(ref, hyp);
}

EditOps edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp) {
  return align(ref, hyp);
}

const char* to_string(ScoringUnit unit) { return unit == ScoringUnit::kWord ? "word" : "char"; }

ScoringUnit unit_for(Language lang) {
  return lang == Language::kEnglish ? ScoringUnit::kWord : ScoringUnit::kChar;
}

std::vector<std::string> split_units(const std::string& text, ScoringUnit unit) {
  return text_units(text, unit == ScoringUnit::kWord ? Language::kEnglish : Language::kChinese);
}

double error_rate(const std::vector<std::string>& refs, const std::vector<std::string>& hyps,
                  ScoringUnit unit) {
  if (refs.size() != hyps.size()) {
    throw ContractError("error_rate: " + std::to_string(refs.size()) + " references but " +
                        std::to_string(hyps.size()) + " hypotheses");
  }
  std::size_t distance = 0, length = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto r = split_units(refs[i], unit);
    distance += edit_distance(r, split_units(hyps[i], unit)).distance();
    length += r.size();
  }
  if (length == 0) throw ValidationError("error rate undefined: total reference length is zero");
  return static_cast<double>(distance) / static_cast<double>(length);
}

EvalReport score_hypotheses(const std::vector<SampleRecord>& records,
                            const std::vector<std::vector<int>>& hypotheses, const Vocabulary& vocab) {
  if (records.size() != hypotheses.size()) throw ContractError("score_hypotheses: length mismatch");
  EvalReport report;
  report.unit = unit_for(vocab.language());
  for (std::size_t i = 0; i < records.size(); ++i) {
    SampleScore s;
    s.id = records[i].id;
    s.reference = normalize_text(records[i].text, vocab.language());
    s.hypothesis_tokens = hypotheses[i];
    s.hypothesis = normalize_text(vocab.render(hypotheses[i]), vocab.language());
    const auto ref_units = split_units(s.reference, report.unit);
    s.ops = edit_distance(ref_units, split_units(s.hypothesis, report.unit));
    s.reference_units = ref_units.size();
    report.total_distance += s.ops.distance();
    report.total_reference_units += s.reference_units;
    report.samples.push_back(std::move(s));
  }
  if (report.total_reference_units == 0) {
    throw ValidationError("error rate undefined: total reference length is zero");
  }
  report.rate = static_cast<double>(report.total_distance) /
                static_cast<double>(report.total_reference_units);
  return report;
}

EvalReport evaluate_model(const Model& model, const std::vector<SampleRecord>& records,
                          const Vocabulary& vocab, std::size_t max_len) {
  std::vector<std::vector<int>> hyps;
  hyps.reserve(records.size());
  for (const auto& r : records) hyps.push_back(model.greedy_decode(model_input(r), max_len));
  return score_hypotheses(records, hyps, vocab);
}

std::string eval_report_jsonl(const EvalReport& report, const std::string& config_echo) {
  std::string out;
  for (const auto& s : report.samples) {
    const json j = {{"type", "sample"},
                    {"id", s.id},
                    {"reference", s.reference},
                    {"hypothesis", s.hypothesis},
                    {"hypothesis_tokens", s.hypothesis_tokens},
                    {"substitutions", s.ops.substitutions},
                    {"deletions", s.ops.deletions},
                    {"insertions", s.ops.insertions},
                    {"distance", s.ops.distance()},
                    {"reference_units", s.reference_units}};
    out += j.dump() + "\n";
  }
  const json summary = {{"type", "summary"},
                        {"unit", to_string(report.unit)},
                        {"pooling", "corpus"},
                        {"rate", report.rate},
                        {"total_distance", report.total_distance},
                        {"total_reference_units", report.total_reference_units},
                        {"samples", report.samples.size()},
                        {"config", config_echo}};
  out += summary.dump() + "\n";
  return out;
}

void write_eval_report(const std::string& path, const EvalReport& report, const std::string& config_echo) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write eval report " + path);
  os << eval_report_jsonl(report, config_echo);
}

}  // namespace avf
