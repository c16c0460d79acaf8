#pragma once

#include <string>
#include <vector>

#include "avfuse/checks.hpp"
#include "avfuse/experiment.hpp"

namespace avf {

// Every command writes config.ini (the resolved configuration, including the
// seed) next to its artifacts. An empty data_dir means the corpus is
// regenerated from the configuration.

// train.jsonl, dev.jsonl and test.jsonl manifests.
void command_gen_data(const ExperimentConfig& cfg, const std::string& out_dir);
Dataset load_dataset(const std::string& data_dir, const SynthTaskConfig& task);

struct TrainOutcome {
  double rate = 0.0;  // test-split error rate
  double final_loss = 0.0;
  std::size_t steps = 0;
};

// Trains cfg.model (replicate 0); writes model.ckpt, train.jsonl, eval.jsonl.
TrainOutcome command_train(const ExperimentConfig& cfg, const std::string& data_dir,
                           const std::string& out_dir, const ProgressFn& progress = {});
// Scores a checkpoint on the test split; writes eval.jsonl.
EvalReport command_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
                        const std::string& data_dir, const std::string& out_dir);
// Writes distill.json, distill.txt and per-run reports.
DistillOutcome command_distill(const ExperimentConfig& cfg, const std::string& out_dir,
                               const ProgressFn& progress = {});
// Writes compare-fusion.json and compare-fusion.txt.
ResultTable command_compare_fusion(const ExperimentConfig& cfg, const std::string& data_dir,
                                   const std::string& out_dir, const ProgressFn& progress = {});
// Writes sweep-window.json and sweep-window.txt.
ResultTable command_sweep_window(const ExperimentConfig& cfg, const std::string& data_dir,
                                 const std::string& out_dir, const ProgressFn& progress = {});
// Writes gradcheck.txt when out_dir is non-empty.
std::vector<GradCheckEntry> command_gradcheck(std::uint64_t seed, const std::string& out_dir);

}  // namespace avf
