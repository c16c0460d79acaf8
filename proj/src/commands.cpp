#include "avfuse/commands.hpp"

#include <filesystem>

#include "avfuse/error.hpp"

namespace avf {

namespace {

ArtifactSink sink_for(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("output directory must not be empty");
  ArtifactSink sink{out_dir};
  sink.write("config.ini", config_echo(cfg));
  return sink;
}

Dataset dataset_for(const ExperimentConfig& cfg, const std::string& data_dir) {
  return data_dir.empty() ? experiment_dataset(cfg) : load_dataset(data_dir, cfg.task);
}

void write_table(const ArtifactSink& sink, const std::string& stem, const ResultTable& table) {
  sink.write(stem + ".json", table_json(table));
  sink.write(stem + ".txt", table_text(table));
}

}  // namespace

void command_gen_data(const ExperimentConfig& cfg, const std::string& out_dir) {
  const ArtifactSink sink = sink_for(cfg, out_dir);
  const Dataset data = experiment_dataset(cfg);
  write_manifest(sink.path("train.jsonl"), data.train);
  write_manifest(sink.path("dev.jsonl"), data.dev);
  write_manifest(sink.path("test.jsonl"), data.test);
}

Dataset load_dataset(const std::string& data_dir, const SynthTaskConfig& task) {
  std::vector<SampleRecord> records;
  for (const char* name : {"train.jsonl", "dev.jsonl", "test.jsonl"}) {
    const auto path = std::filesystem::path(data_dir) / name;
    auto part = read_manifest(path.string());
    records.insert(records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  for (const auto& r : records) {
    if (r.audio.cols != task.audio_width || r.visual.cols != task.visual_width) {
      throw ValidationError("record " + r.id + " does not match the configured feature widths");
    }
  }
  Dataset data = make_dataset(std::move(records), task);
  if (data.train.empty() || data.test.empty()) {
    throw ValidationError("data directory " + data_dir + " lacks train or test records");
  }
  return data;
}

TrainOutcome command_train(const ExperimentConfig& cfg, const std::string& data_dir,
                           const std::string& out_dir, const ProgressFn& progress) {
  const ArtifactSink sink = sink_for(cfg, out_dir);
  const Dataset data = dataset_for(cfg, data_dir);
  const RunResult run = train_and_evaluate(cfg, data, cfg.model, 0, to_string(cfg.model.variant));
  const std::string echo = config_echo(cfg);
  sink.write("train.jsonl", train_report_jsonl(run.train, echo));
  sink.write("eval.jsonl", eval_report_jsonl(run.eval, echo));
  save_checkpoint(sink.path("model.ckpt"), run.model, echo);
  if (progress) progress("test error rate " + std::to_string(run.eval.rate));
  return {run.eval.rate, run.train.steps.empty() ? 0.0 : run.train.steps.back().loss, run.train.steps.size()};
}

EvalReport command_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
                        const std::string& data_dir, const std::string& out_dir) {
  const ArtifactSink sink = sink_for(cfg, out_dir);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Dataset data = dataset_for(cfg, data_dir);
  const EvalReport report = evaluate_model(ckpt.model, data.test, data.vocab, cfg.max_decode_length);
  sink.write("eval.jsonl", eval_report_jsonl(report, config_echo(cfg) + "\n# checkpoint " + checkpoint + "\n"));
  return report;
}

DistillOutcome command_distill(const ExperimentConfig& cfg, const std::string& out_dir,
                               const ProgressFn& progress) {
  const ArtifactSink sink = sink_for(cfg, out_dir);
  DistillOutcome out = run_distillation(cfg, sink, progress);
  write_table(sink, "distill", out.table);
  std::string subsets;
  for (std::size_t r = 0; r < out.subsets.size(); ++r) {
    subsets += out.subsets[r] + "\tlabel_accuracy=" + std::to_string(out.label_accuracy[r]) + "\n";
  }
  sink.write("distill-subsets.txt", subsets);
  return out;
}

ResultTable command_compare_fusion(const ExperimentConfig& cfg, const std::string& data_dir,
                                   const std::string& out_dir, const ProgressFn& progress) {
  const ArtifactSink sink = sink_for(cfg, out_dir);
  const ResultTable table = compare_fusion(cfg, dataset_for(cfg, data_dir), sink, progress);
  write_table(sink, "compare-fusion", table);
  return table;
}

ResultTable command_sweep_window(const ExperimentConfig& cfg, const std::string& data_dir,
                                 const std::string& out_dir, const ProgressFn& progress) {
  const ArtifactSink sink = sink_for(cfg, out_dir);
  const ResultTable table = sweep_window(cfg, dataset_for(cfg, data_dir), sink, progress);
  write_table(sink, "sweep-window", table);
  return table;
}

std::vector<GradCheckEntry> command_gradcheck(std::uint64_t seed, const std::string& out_dir) {
  const auto entries = gradient_suite(seed);
  if (!out_dir.empty()) ArtifactSink{out_dir}.write("gradcheck.txt", gradient_suite_report(entries));
  return entries;
}

}  // namespace avf
