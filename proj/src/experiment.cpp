#include "avfuse/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <type_traits>

#include "avfuse/error.hpp"
#include "avfuse/rng.hpp"

namespace avf {

using nlohmann::json;

// ---- configuration ------------------------------------------------------------------

namespace {

template <typename T>
std::string fmt(T v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  } else {
    return std::to_string(v);
  }
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size() || item.empty()) {
      throw ConfigError("config key '" + key + "': bad list entry '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
  return out;
}

std::string join(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

}  // namespace

void ExperimentConfig::resolve() {
  model.vocab = task.vocab;
  model.audio_input_width = task.audio_width;
  model.visual_input_width = task.visual_width;
  model.max_target_length = std::max(model.max_target_length, task.max_length + 1);
  task.validate();
  model.validate();
  train.schedule.validate();
  distill.kd.validate();
  if (replicates == 0) throw ConfigError("replicates must be positive");
  if (max_decode_length == 0) throw ConfigError("max decode length must be positive");
  if (train.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(train.clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  if (!(distill.subset_fraction > 0.0 && distill.subset_fraction <= 1.0)) {
    throw ConfigError("distill subset fraction must lie in (0, 1]");
  }
  if (distill.steps == 0 || !(distill.peak_lr > 0.0)) throw ConfigError("distill budget must be positive");
  if (distill.lora_rank == 0 || distill.lora_rank > model.width) {
    throw ConfigError("distill LoRA rank must lie in [1, width]");
  }
  if (distill.source_successors > task.vocab - kFirstContentToken) {
    throw ConfigError("too many source successors");
  }
  for (std::size_t w : sweep_windows) {
    if (w < 2) throw ConfigError("sweep windows must be at least 2 frames");
  }
}

ExperimentConfig default_experiment() {
  ExperimentConfig cfg;
  cfg.task.successors = 4;
  cfg.train.schedule.total_steps = 1500;
  cfg.train.schedule.peak_lr = 1e-3;
  cfg.resolve();
  return cfg;
}

ExperimentConfig experiment_from_config(const Config& c) {
  static const std::set<std::string> known = {
      "run.seed", "run.replicates", "run.max_decode_length",
      "task.vocab", "task.min_length", "task.max_length", "task.audio_corruption",
      "task.audio_noise", "task.visual_corruption", "task.audio_width", "task.visual_width",
      "task.repeats", "task.successors", "task.language", "task.embedding_seed",
      "corpus.samples", "corpus.sources", "corpus.train", "corpus.dev", "corpus.test",
      "model.variant", "model.width", "model.visual_width", "model.encoder_layers",
      "model.encoder_heads", "model.decoder_layers", "model.decoder_heads",
      "model.ffn_multiplier", "model.max_target_length", "model.freeze_encoders",
      "model.lora_rank",
      "fusion.variant", "fusion.window", "fusion.stride", "fusion.queries", "fusion.heads",
      "fusion.pool",
      "train.steps", "train.peak_lr", "train.warmup_fraction", "train.floor_lr",
      "train.batch_size", "train.clip_norm", "train.beta1", "train.beta2", "train.epsilon",
      "train.weight_decay",
      "distill.alpha", "distill.beta", "distill.temperature", "distill.kl_tau_square",
      "distill.labels", "distill.subset_fraction", "distill.steps", "distill.peak_lr",
      "distill.lora_rank", "distill.source_successors",
      "sweep.windows"};
  for (const auto& [key, value] : c.values()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  ExperimentConfig e = default_experiment();
  e.seed = c.get_u64("run.seed", e.seed);
  e.replicates = c.get_size("run.replicates", e.replicates);
  e.max_decode_length = c.get_size("run.max_decode_length", e.max_decode_length);

  auto& t = e.task;
  t.vocab = c.get_size("task.vocab", t.vocab);
  t.min_length = c.get_size("task.min_length", t.min_length);
  t.max_length = c.get_size("task.max_length", t.max_length);
  t.audio_corruption = c.get_double("task.audio_corruption", t.audio_corruption);
  t.audio_noise = c.get_double("task.audio_noise", t.audio_noise);
  t.visual_corruption = c.get_double("task.visual_corruption", t.visual_corruption);
  t.audio_width = c.get_size("task.audio_width", t.audio_width);
  t.visual_width = c.get_size("task.visual_width", t.visual_width);
  t.repeats = c.get_size("task.repeats", t.repeats);
  t.successors = c.get_size("task.successors", t.successors);
  t.language = parse_language(c.get_string("task.language", to_string(t.language)));
  t.embedding_seed = c.get_u64("task.embedding_seed", t.embedding_seed);

  e.corpus.samples = c.get_size("corpus.samples", e.corpus.samples);
  e.corpus.sources = c.get_size("corpus.sources", e.corpus.sources);
  e.corpus.ratios.train = c.get_double("corpus.train", e.corpus.ratios.train);
  e.corpus.ratios.dev = c.get_double("corpus.dev", e.corpus.ratios.dev);
  e.corpus.ratios.test = c.get_double("corpus.test", e.corpus.ratios.test);

  auto& m = e.model;
  m.variant = parse_model_variant(c.get_string("model.variant", to_string(m.variant)));
  m.width = c.get_size("model.width", m.width);
  m.visual_width = c.get_size("model.visual_width", m.visual_width);
  m.encoder_layers = c.get_size("model.encoder_layers", m.encoder_layers);
  m.encoder_heads = c.get_size("model.encoder_heads", m.encoder_heads);
  m.decoder_layers = c.get_size("model.decoder_layers", m.decoder_layers);
  m.decoder_heads = c.get_size("model.decoder_heads", m.decoder_heads);
  m.ffn_multiplier = c.get_size("model.ffn_multiplier", m.ffn_multiplier);
  m.max_target_length = c.get_size("model.max_target_length", m.max_target_length);
  m.freeze_encoders = c.get_bool("model.freeze_encoders", m.freeze_encoders);
  m.lora_rank = c.get_size("model.lora_rank", m.lora_rank);

  auto& f = m.fusion;
  f.variant = parse_fusion_variant(c.get_string("fusion.variant", to_string(f.variant)));
  f.window.window = c.get_size("fusion.window", f.window.window);
  f.window.stride = c.get_size("fusion.stride", f.window.stride);
  f.queries = c.get_size("fusion.queries", f.queries);
  f.heads = c.get_size("fusion.heads", f.heads);
  f.pool = parse_pool_mode(c.get_string("fusion.pool", to_string(f.pool)));

  auto& tr = e.train;
  tr.schedule.total_steps = c.get_size("train.steps", tr.schedule.total_steps);
  tr.schedule.peak_lr = c.get_double("train.peak_lr", tr.schedule.peak_lr);
  tr.schedule.warmup_fraction = c.get_double("train.warmup_fraction", tr.schedule.warmup_fraction);
  tr.schedule.floor_lr = c.get_double("train.floor_lr", tr.schedule.floor_lr);
  tr.batch_size = c.get_size("train.batch_size", tr.batch_size);
  tr.clip_norm = c.get_double("train.clip_norm", tr.clip_norm);
  tr.adam.beta1 = c.get_double("train.beta1", tr.adam.beta1);
  tr.adam.beta2 = c.get_double("train.beta2", tr.adam.beta2);
  tr.adam.epsilon = c.get_double("train.epsilon", tr.adam.epsilon);
  tr.adam.weight_decay = c.get_double("train.weight_decay", tr.adam.weight_decay);

  auto& d = e.distill;
  d.kd.alpha = c.get_double("distill.alpha", d.kd.alpha);
  d.kd.beta = c.get_double("distill.beta", d.kd.beta);
  d.kd.temperature = c.get_double("distill.temperature", d.kd.temperature);
  d.kd.kl_tau_square = c.get_bool("distill.kl_tau_square", d.kd.kl_tau_square);
  d.kd.labels = parse_label_source(c.get_string("distill.labels", to_string(d.kd.labels)));
  d.subset_fraction = c.get_double("distill.subset_fraction", d.subset_fraction);
  d.steps = c.get_size("distill.steps", d.steps);
  d.peak_lr = c.get_double("distill.peak_lr", d.peak_lr);
  d.lora_rank = c.get_size("distill.lora_rank", d.lora_rank);
  d.source_successors = c.get_size("distill.source_successors", d.source_successors);

  if (c.has("sweep.windows")) e.sweep_windows = parse_list("sweep.windows", c.get_string("sweep.windows", ""));
  e.resolve();
  return e;
}

Config experiment_to_config(const ExperimentConfig& e) {
  Config c;
  c.set("run.seed", fmt(e.seed));
  c.set("run.replicates", fmt(e.replicates));
  c.set("run.max_decode_length", fmt(e.max_decode_length));
  const auto& t = e.task;
  c.set("task.vocab", fmt(t.vocab));
  c.set("task.min_length", fmt(t.min_length));
  c.set("task.max_length", fmt(t.max_length));
  c.set("task.audio_corruption", fmt(t.audio_corruption));
  c.set("task.audio_noise", fmt(t.audio_noise));
  c.set("task.visual_corruption", fmt(t.visual_corruption));
  c.set("task.audio_width", fmt(t.audio_width));
  c.set("task.visual_width", fmt(t.visual_width));
  c.set("task.repeats", fmt(t.repeats));
  c.set("task.successors", fmt(t.successors));
  c.set("task.language", to_string(t.language));
  c.set("task.embedding_seed", fmt(t.embedding_seed));
  c.set("corpus.samples", fmt(e.corpus.samples));
  c.set("corpus.sources", fmt(e.corpus.sources));
  c.set("corpus.train", fmt(e.corpus.ratios.train));
  c.set("corpus.dev", fmt(e.corpus.ratios.dev));
  c.set("corpus.test", fmt(e.corpus.ratios.test));
  const auto& m = e.model;
  c.set("model.variant", to_string(m.variant));
  c.set("model.width", fmt(m.width));
  c.set("model.visual_width", fmt(m.visual_width));
  c.set("model.encoder_layers", fmt(m.encoder_layers));
  c.set("model.encoder_heads", fmt(m.encoder_heads));
  c.set("model.decoder_layers", fmt(m.decoder_layers));
  c.set("model.decoder_heads", fmt(m.decoder_heads));
  c.set("model.ffn_multiplier", fmt(m.ffn_multiplier));
  c.set("model.max_target_length", fmt(m.max_target_length));
  c.set("model.freeze_encoders", fmt(m.freeze_encoders));
  c.set("model.lora_rank", fmt(m.lora_rank));
  c.set("fusion.variant", to_string(m.fusion.variant));
  c.set("fusion.window", fmt(m.fusion.window.window));
  c.set("fusion.stride", fmt(m.fusion.window.stride));
  c.set("fusion.queries", fmt(m.fusion.queries));
  c.set("fusion.heads", fmt(m.fusion.heads));
  c.set("fusion.pool", to_string(m.fusion.pool));
  const auto& tr = e.train;
  c.set("train.steps", fmt(tr.schedule.total_steps));
  c.set("train.peak_lr", fmt(tr.schedule.peak_lr));
  c.set("train.warmup_fraction", fmt(tr.schedule.warmup_fraction));
  c.set("train.floor_lr", fmt(tr.schedule.floor_lr));
  c.set("train.batch_size", fmt(tr.batch_size));
  c.set("train.clip_norm", fmt(tr.clip_norm));
  c.set("train.beta1", fmt(tr.adam.beta1));
  c.set("train.beta2", fmt(tr.adam.beta2));
  c.set("train.epsilon", fmt(tr.adam.epsilon));
  c.set("train.weight_decay", fmt(tr.adam.weight_decay));
  const auto& d = e.distill;
  c.set("distill.alpha", fmt(d.kd.alpha));
  c.set("distill.beta", fmt(d.kd.beta));
  c.set("distill.temperature", fmt(d.kd.temperature));
  c.set("distill.kl_tau_square", fmt(d.kd.kl_tau_square));
  c.set("distill.labels", to_string(d.kd.labels));
  c.set("distill.subset_fraction", fmt(d.subset_fraction));
  c.set("distill.steps", fmt(d.steps));
  c.set("distill.peak_lr", fmt(d.peak_lr));
  c.set("distill.lora_rank", fmt(d.lora_rank));
  c.set("distill.source_successors", fmt(d.source_successors));
  c.set("sweep.windows", join(e.sweep_windows));
  return c;
}

std::string config_echo(const ExperimentConfig& cfg) { return experiment_to_config(cfg).to_text(); }

std::uint64_t replicate_seed(std::uint64_t seed, std::size_t replicate) {
  return derive_seed(derive_seed(seed, "replicate"), static_cast<std::uint64_t>(replicate));
}

// ---- data and training ----------------------------------------------------------------

Dataset make_dataset(std::vector<SampleRecord> records, const SynthTaskConfig& task) {
  Dataset d;
  d.records = std::move(records);
  d.train = records_in(d.records, Split::kTrain);
  d.dev = records_in(d.records, Split::kDev);
  d.test = records_in(d.records, Split::kTest);
  d.vocab = Vocabulary(task.vocab, task.language);
  return d;
}

Dataset experiment_dataset(const ExperimentConfig& cfg) {
  return make_dataset(generate_corpus(cfg.task, cfg.corpus, derive_seed(cfg.seed, "data")), cfg.task);
}

namespace {

// Encoder outputs are constants when the encoders are frozen, so they are
// computed once per record.
class EncodedCache {
 public:
  EncodedCache(const Model& model, const std::vector<SampleRecord>& records)
      : model_(model), records_(records) {
    if (model.config().freeze_encoders) {
      NoGradGuard no_grad;
      for (const auto& r : records) cache_.push_back(model.encode(model_input(r)));
    }
  }

  EncodedInput get(std::size_t i) const {
    return cache_.empty() ? model_.encode(model_input(records_[i])) : cache_[i];
  }

 private:
  const Model& model_;
  const std::vector<SampleRecord>& records_;
  std::vector<EncodedInput> cache_;
};

}  // namespace

TrainReport train_model(Model& model, const TrainingJob& job, const TrainConfig& cfg) {
  if (job.records == nullptr || job.records->empty()) throw ContractError("train_model: no records");
  const auto& records = *job.records;
  if (job.labels != nullptr && job.labels->size() != records.size()) {
    throw ContractError("train_model: label count differs from record count");
  }
  auto labels_of = [&](std::size_t i) -> const std::vector<int>& {
    return job.labels ? (*job.labels)[i] : records[i].tokens;
  };
  const EncodedCache student_inputs(model, records);
  std::vector<Tensor> teacher_logits;
  if (job.teacher != nullptr) {
    job.kd.validate();
    NoGradGuard no_grad;
    const EncodedCache teacher_inputs(*job.teacher, records);
    for (std::size_t i = 0; i < records.size(); ++i) {
      teacher_logits.push_back(
          job.teacher->logits(job.teacher->memory(teacher_inputs.get(i)), decoder_input(labels_of(i))));
    }
  }
  const std::vector<Tensor> params = trainable(model.parameters());
  return fit(params, records.size(), [&](std::span<const std::size_t> batch) {
    std::vector<Tensor> losses;
    losses.reserve(batch.size());
    for (std::size_t i : batch) {
      const auto& y = labels_of(i);
      const Tensor logits = model.logits(model.memory(student_inputs.get(i)), decoder_input(y));
      const std::vector<int> targets = decoder_targets(y);
      losses.push_back(job.teacher ? kd_loss(logits, teacher_logits[i], targets, job.kd)
                                   : masked_cross_entropy(logits, targets));
    }
    return reduce_mean(stack(losses), 0);
  }, cfg);
}

RunResult train_and_evaluate(const ExperimentConfig& cfg, const Dataset& data,
                             const ModelConfig& model_cfg, std::size_t replicate, std::string name) {
  RunResult run;
  run.name = std::move(name);
  run.replicate = replicate;
  run.seed = replicate_seed(cfg.seed, replicate);
  run.model = Model::build(model_cfg, derive_seed(run.seed, "model"));
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(run.seed, "train");
  run.train = train_model(run.model, TrainingJob{&data.train, nullptr, nullptr, {}}, tc);
  run.eval = evaluate_model(run.model, data.test, data.vocab, cfg.max_decode_length);
  return run;
}

// ---- tables -----------------------------------------------------------------------------

double ResultTable::Row::mean() const {
  if (rates.empty()) return 0.0;
  return std::accumulate(rates.begin(), rates.end(), 0.0) / static_cast<double>(rates.size());
}

const ResultTable::Row& ResultTable::row(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.label == label) return r;
  }
  throw ContractError("result table has no row '" + label + "'");
}

std::string table_json(const ResultTable& table) {
  json rows = json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"label", r.label}, {"rates", r.rates}, {"mean", r.mean()}});
  }
  const json j = {{"title", table.title}, {"unit", to_string(table.unit)},
                  {"metric", table.unit == ScoringUnit::kWord ? "WER" : "CER"},
                  {"seeds", table.seeds}, {"rows", rows}, {"config", table.config}};
  return j.dump(2) + "\n";
}

std::string table_text(const ResultTable& table) {
  std::size_t width = 8;
  for (const auto& r : table.rows) width = std::max(width, r.label.size());
  std::ostringstream os;
  os << table.title << "\n";
  os << std::left << std::setw(static_cast<int>(width)) << "row";
  for (std::size_t i = 0; i < table.seeds.size(); ++i) os << "  seed" << i + 1 << "  ";
  os << "  mean " << (table.unit == ScoringUnit::kWord ? "WER" : "CER") << "\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& r : table.rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.label;
    for (double v : r.rates) os << "  " << v;
    os << "  " << r.mean() << "\n";
  }
  return os.str();
}

ModelConfig arm_config(const ExperimentConfig& cfg, const std::string& arm) {
  ModelConfig m = cfg.model;
  m.lora_rank = 0;
  if (arm == "audio-only") {
    m.variant = ModelVariant::kAudioOnly;
  } else if (arm == "audio-swqf") {
    m.variant = ModelVariant::kAudioSwqf;
  } else {
    m.variant = ModelVariant::kAudioVisual;
    m.fusion.variant = parse_fusion_variant(arm);
  }
  m.validate();
  return m;
}

std::string ArtifactSink::path(const std::string& file) const {
  return (std::filesystem::path(directory) / file).string();
}

void ArtifactSink::write(const std::string& file, const std::string& contents) const {
  if (!enabled()) return;
  std::filesystem::create_directories(directory);
  std::ofstream os(path(file), std::ios::binary);
  if (!os) throw IoError("cannot write " + path(file));
  os << contents;
}

void ArtifactSink::write_run(const RunResult& run, const std::string& config) const {
  if (!enabled()) return;
  const std::string stem = run.name + "-r" + std::to_string(run.replicate + 1);
  const std::string echo = config + "\n# run " + stem + " seed " + std::to_string(run.seed) + "\n";
  write(stem + ".train.jsonl", train_report_jsonl(run.train, echo));
  write(stem + ".eval.jsonl", eval_report_jsonl(run.eval, echo));
}

namespace {

ResultTable new_table(const ExperimentConfig& cfg, std::string title, const Dataset& data) {
  ResultTable t;
  t.title = std::move(title);
  t.unit = unit_for(data.vocab.language());
  for (std::size_t r = 0; r < cfg.replicates; ++r) t.seeds.push_back(replicate_seed(cfg.seed, r));
  t.config = config_echo(cfg);
  return t;
}

void note(const ProgressFn& progress, const RunResult& run) {
  if (!progress) return;
  std::ostringstream os;
  os << run.name << " replicate " << run.replicate + 1 << ": rate " << run.eval.rate << ", final loss "
     << (run.train.steps.empty() ? 0.0 : run.train.steps.back().loss);
  progress(os.str());
}

}  // namespace

ResultTable compare_fusion(const ExperimentConfig& cfg, const Dataset& data, const ArtifactSink& sink,
                           const ProgressFn& progress) {
  ResultTable table = new_table(cfg, "fusion variants", data);
  for (const char* arm : {"linear-concat", "plain-qformer", "swqf-crossattn"}) {
    ResultTable::Row row{arm, {}};
    for (std::size_t r = 0; r < cfg.replicates; ++r) {
      const RunResult run = train_and_evaluate(cfg, data, arm_config(cfg, arm), r, arm);
      sink.write_run(run, table.config);
      note(progress, run);
      row.rates.push_back(run.eval.rate);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

ResultTable sweep_window(const ExperimentConfig& cfg, const Dataset& data, const ArtifactSink& sink,
                         const ProgressFn& progress) {
  ResultTable table = new_table(cfg, "sliding-window size", data);
  for (std::size_t w : cfg.sweep_windows) {
    ModelConfig m = arm_config(cfg, "swqf-crossattn");
    m.fusion.window = {w, std::max<std::size_t>(1, w / 2)};
    const std::string name = "swqf-w" + std::to_string(w);
    ResultTable::Row row{name, {}};
    for (std::size_t r = 0; r < cfg.replicates; ++r) {
      const RunResult run = train_and_evaluate(cfg, data, m, r, name);
      sink.write_run(run, table.config);
      note(progress, run);
      row.rates.push_back(run.eval.rate);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

double token_accuracy(const std::vector<std::vector<int>>& hyps, const std::vector<SampleRecord>& refs) {
  if (hyps.size() != refs.size()) throw ContractError("token_accuracy: length mismatch");
  std::size_t right = 0, total = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    for (std::size_t k = 0; k < refs[i].tokens.size(); ++k) {
      right += k < hyps[i].size() && hyps[i][k] == refs[i].tokens[k];
    }
    total += refs[i].tokens.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(right) / static_cast<double>(total);
}

DistillOutcome run_distillation(const ExperimentConfig& cfg, const ArtifactSink& sink,
                                const ProgressFn& progress) {
  const Dataset target = experiment_dataset(cfg);
  SynthTaskConfig source_task = cfg.task;
  source_task.successors = cfg.distill.source_successors;
  const Dataset source = make_dataset(
      generate_corpus(source_task, cfg.corpus, derive_seed(cfg.seed, "source-data")), source_task);

  DistillOutcome out;
  out.table = new_table(cfg, "knowledge distillation", target);
  ResultTable::Row teacher_row{"teacher", {}}, base_row{"student-no-distill", {}},
      hard_row{"student-pseudo-label", {}}, kd_row{"student-distilled", {}};

  for (std::size_t r = 0; r < cfg.replicates; ++r) {
    RunResult teacher = train_and_evaluate(cfg, target, arm_config(cfg, "swqf-crossattn"), r, "teacher");
    teacher.model.freeze_all();
    sink.write_run(teacher, out.table.config);
    note(progress, teacher);
    teacher_row.rates.push_back(teacher.eval.rate);

    RunResult base = train_and_evaluate(cfg, source, arm_config(cfg, "audio-only"), r, "student-base");
    base.eval = evaluate_model(base.model, target.test, target.vocab, cfg.max_decode_length);
    base.name = "student-no-distill";
    sink.write_run(base, out.table.config);
    note(progress, base);
    base_row.rates.push_back(base.eval.rate);

    const SubsetSpec spec{Split::kTrain, cfg.distill.subset_fraction, derive_seed(base.seed, "subset")};
    std::vector<SampleRecord> subset;
    for (std::size_t i : select_subset(target.records, spec)) subset.push_back(target.records[i]);
    out.subsets.push_back(spec.expression());

    std::vector<std::vector<int>> labels;
    if (cfg.distill.kd.labels == LabelSource::kTeacher) {
      labels = generate_pseudo_labels(teacher.model, subset, cfg.max_decode_length);
    } else {
      for (const auto& s : subset) labels.push_back(s.tokens);
    }
    out.label_accuracy.push_back(token_accuracy(labels, subset));

    TrainConfig tc = cfg.train;
    tc.schedule.total_steps = cfg.distill.steps;
    tc.schedule.peak_lr = cfg.distill.peak_lr;
    tc.seed = derive_seed(base.seed, "distill");

    DistillConfig hard = cfg.distill.kd;
    hard.alpha = 1.0;
    hard.beta = 0.0;
    for (auto* arm : {&hard_row, &kd_row}) {
      RunResult student;
      student.name = arm->label;
      student.replicate = r;
      student.seed = base.seed;
      student.model = base.model.clone();
      student.model.attach_decoder_lora(cfg.distill.lora_rank);
      const TrainingJob job{&subset, &labels, &teacher.model, arm == &hard_row ? hard : cfg.distill.kd};
      student.train = train_model(student.model, job, tc);
      student.eval = evaluate_model(student.model, target.test, target.vocab, cfg.max_decode_length);
      sink.write_run(student, out.table.config);
      note(progress, student);
      arm->rates.push_back(student.eval.rate);
    }
  }
  out.table.rows = {teacher_row, base_row, hard_row, kd_row};
  return out;
}

}  // namespace avf
