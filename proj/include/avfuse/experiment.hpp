#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "avfuse/config.hpp"
#include "avfuse/data.hpp"
#include "avfuse/distill.hpp"
#include "avfuse/eval.hpp"
#include "avfuse/model.hpp"
#include "avfuse/train.hpp"

namespace avf {

struct DistillSettings {
  DistillConfig kd;
  double subset_fraction = 0.1;  // of the train split
  std::size_t steps = 300;
  double peak_lr = 1e-3;
  std::size_t lora_rank = 8;
  // Successor-table size of the corpus the student is pretrained on. The
  // distillation corpus uses task.successors, so a mismatch models a student
  // that has never seen the target domain.
  std::size_t source_successors = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t replicates = 3;
  std::size_t max_decode_length = 16;
  SynthTaskConfig task;
  CorpusConfig corpus;
  ModelConfig model;
  TrainConfig train;  // train.seed is replaced by each run's derived seed
  DistillSettings distill;
  std::vector<std::size_t> sweep_windows{32, 64, 128, 256};

  // Copies the task feature widths and vocabulary into the model block and
  // validates every block.
  void resolve();
};

ExperimentConfig default_experiment();
// Unknown keys raise ConfigError.
ExperimentConfig experiment_from_config(const Config& cfg);
Config experiment_to_config(const ExperimentConfig& cfg);
std::string config_echo(const ExperimentConfig& cfg);

// Seed of replicate r; every replicate's randomness derives from it.
std::uint64_t replicate_seed(std::uint64_t seed, std::size_t replicate);

struct Dataset {
  std::vector<SampleRecord> records;
  std::vector<SampleRecord> train, dev, test;
  Vocabulary vocab{64, Language::kEnglish};
};

Dataset make_dataset(std::vector<SampleRecord> records, const SynthTaskConfig& task);
// Corpus of the experiment, generated from derive_seed(seed, "data").
Dataset experiment_dataset(const ExperimentConfig& cfg);

// Supervised teacher-forced training. labels[i] is the target sequence for
// records[i]; with a teacher, kd_loss replaces plain cross-entropy.
struct TrainingJob {
  const std::vector<SampleRecord>* records = nullptr;
  const std::vector<std::vector<int>>* labels = nullptr;  // null: record tokens
  const Model* teacher = nullptr;
  DistillConfig kd;
};

TrainReport train_model(Model& model, const TrainingJob& job, const TrainConfig& cfg);

struct RunResult {
  std::string name;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  Model model;
  TrainReport train;
  EvalReport eval;
};

// Builds model_cfg with the replicate seed, trains on data.train and scores data.test.
RunResult train_and_evaluate(const ExperimentConfig& cfg, const Dataset& data,
                             const ModelConfig& model_cfg, std::size_t replicate, std::string name);

// Error rates of several configurations over replicates.
struct ResultTable {
  std::string title;
  ScoringUnit unit = ScoringUnit::kWord;
  std::vector<std::uint64_t> seeds;
  struct Row {
    std::string label;
    std::vector<double> rates;  // one per replicate
    double mean() const;
  };
  std::vector<Row> rows;
  std::string config;

  const Row& row(const std::string& label) const;
};

std::string table_json(const ResultTable& table);
std::string table_text(const ResultTable& table);

// Model config of a named fusion arm: "audio-only", "audio-swqf" or a fusion
// variant name ("linear-concat", "plain-qformer", "swqf-crossattn").
ModelConfig arm_config(const ExperimentConfig& cfg, const std::string& arm);

// Output sink for per-run artifacts; empty directory disables writing.
struct ArtifactSink {
  std::string directory;

  bool enabled() const { return !directory.empty(); }
  std::string path(const std::string& file) const;
  void write(const std::string& file, const std::string& contents) const;
  void write_run(const RunResult& run, const std::string& config) const;
};

using ProgressFn = std::function<void(const std::string&)>;

// Three fusion variants under one budget.
ResultTable compare_fusion(const ExperimentConfig& cfg, const Dataset& data, const ArtifactSink& sink,
                           const ProgressFn& progress = {});
// swqf-crossattn for each window in cfg.sweep_windows (stride w/2).
ResultTable sweep_window(const ExperimentConfig& cfg, const Dataset& data, const ArtifactSink& sink,
                         const ProgressFn& progress = {});

struct DistillOutcome {
  ResultTable table;  // teacher, student-no-distill, student-pseudo-label, student-distilled
  std::vector<std::string> subsets;  // subset expression per replicate
  std::vector<double> label_accuracy;  // pseudo-label token accuracy per replicate
};

// Teacher: AV model trained on the experiment corpus. Student: audio-only
// model pretrained on the source corpus, then LoRA-adapted on a train subset
// labeled by the teacher, once with hard labels (α=1, β=0) and once with the
// configured kd_loss.
DistillOutcome run_distillation(const ExperimentConfig& cfg, const ArtifactSink& sink,
                                const ProgressFn& progress = {});

// Token accuracy of hypotheses against references, position by position over
// the reference length.
double token_accuracy(const std::vector<std::vector<int>>& hyps, const std::vector<SampleRecord>& refs);

}  // namespace avf
