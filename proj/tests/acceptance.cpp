// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
// Usage: acceptance [--only 1,2,...] [--out DIR]
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "avfuse/checks.hpp"
#include "avfuse/data.hpp"
#include "avfuse/eval.hpp"
#include "avfuse/experiment.hpp"
#include "avfuse/fusion.hpp"
#include "avfuse/model.hpp"
#include "avfuse/rng.hpp"
#include "avfuse/train.hpp"
#include "oracles.hpp"

namespace {

using namespace avf;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

// ---- pinned tolerances and budgets ------------------------------------------------------

constexpr double kLayerTol = 1e-6;
constexpr double kComposedTol = 1e-4;
constexpr double kGradSuiteSeconds = 120.0;
constexpr double kOracleTol = 1e-10;
constexpr std::size_t kOracleInstances = 100;
constexpr double kOracleSeconds = 60.0;
constexpr double kOrderTol = 1e-12;
constexpr double kFusionMinReduction = 0.20;
constexpr std::size_t kMaxSteps = 3000;
constexpr double kRunSeconds = 600.0;
constexpr double kPeakLr = 1e-4;
constexpr double kWarmupFraction = 0.03;
constexpr double kLrTol = 1e-15;
constexpr double kClipNorm = 1.0;
constexpr double kClipSlack = 1e-12;
constexpr std::size_t kLeakageSeeds = 1000;
constexpr std::size_t kLeakageSources = 50;
constexpr std::size_t kNormalizeStrings = 10000;
constexpr double kMetricTol = 1e-15;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fixed(double v, int precision = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(2);
  os << v;
  return os.str();
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("violated: " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

// ---- C1 -----------------------------------------------------------------------------------

Outcome criterion_gradients() {
  Outcome out;
  const auto t0 = Clock::now();
  const auto entries = gradient_suite(1);
  const double secs = seconds_since(t0);
  double worst_layer = 0.0, worst_composed = 0.0;
  std::size_t layers = 0, composed = 0;
  for (const auto& e : entries) {
    const double tol = e.composed ? kComposedTol : kLayerTol;
    out.require(e.max_rel_error < tol, e.name + " rel " + sci(e.max_rel_error) + " >= " + sci(tol));
    (e.composed ? worst_composed : worst_layer) =
        std::max(e.composed ? worst_composed : worst_layer, e.max_rel_error);
    ++(e.composed ? composed : layers);
  }
  out.require(layers >= 9 && composed >= 5, "suite covers every layer and the composed models");
  out.require(secs < kGradSuiteSeconds, "runtime " + fixed(secs, 1) + " s under budget");
  out.note(std::to_string(layers) + " layer checks, worst " + sci(worst_layer) + "; " + std::to_string(composed) +
           " composed checks, worst " + sci(worst_composed) + "; " + fixed(secs, 1) + " s");
  return out;
}

// ---- C2 -----------------------------------------------------------------------------------

Outcome criterion_oracles() {
  Outcome out;
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst_matmul = 0.0, worst_attn = 0.0, worst_swqf = 0.0;
  std::size_t edit_mismatch = 0;

  for (std::size_t i = 0; i < kOracleInstances; ++i) {
    const std::size_t m = 1 + rng.index(8), k = 1 + rng.index(8), n = 1 + rng.index(8);
    const Tensor a = oracle::random_tensor({m, k}, rng);
    const Tensor b = oracle::random_tensor({k, n}, rng);
    worst_matmul = std::max(worst_matmul, oracle::max_abs_diff(
                                              oracle::matmul(oracle::to_matrix(a), oracle::to_matrix(b)), matmul(a, b)));
  }
  for (std::size_t i = 0; i < kOracleInstances; ++i) {
    const std::size_t heads = 1 + rng.index(3);
    const std::size_t width = heads * (1 + rng.index(3));
    const std::size_t lq = 1 + rng.index(6), lk = 1 + rng.index(6);
    const MultiHeadAttention attn(width, heads, rng);
    const Tensor q = oracle::random_tensor({lq, width}, rng);
    const Tensor kv = oracle::random_tensor({lk, width}, rng);
    std::vector<std::uint8_t> valid(lk, 1);
    if (i % 2 == 1) {
      for (auto& v : valid) v = rng.uniform(0.0, 1.0) < 0.6;
      valid[rng.index(lk)] = 1;
    }
    const AttentionMask mask = AttentionMask::keys(lq, valid);
    worst_attn = std::max(worst_attn, oracle::max_abs_diff(
                                          oracle::attention(attn, oracle::to_matrix(q), oracle::to_matrix(kv), valid),
                                          attn.forward(q, kv, &mask)));
  }
  for (std::size_t i = 0; i < kOracleInstances; ++i) {
    const std::size_t heads = 1 + rng.index(2);
    const std::size_t width = heads * (1 + rng.index(3));
    const std::size_t w = 1 + rng.index(8);
    const std::size_t stride = 1 + rng.index(w);
    const std::size_t T = 1 + rng.index(20);
    const std::size_t M = 1 + rng.index(4);
    const WindowQFormer module(width, M, heads, {w, stride}, PoolMode::kMean, rng);
    const Tensor audio = oracle::random_tensor({T, width}, rng);
    worst_swqf = std::max(worst_swqf, oracle::max_abs_diff(oracle::window_qformer(module, oracle::to_matrix(audio)),
                                                           module.forward(audio).queries));
  }
  for (std::size_t i = 0; i < kOracleInstances; ++i) {
    std::vector<int> ref(rng.index(7)), hyp(rng.index(7));
    for (int& t : ref) t = static_cast<int>(rng.index(3));
    for (int& t : hyp) t = static_cast<int>(rng.index(3));
    edit_mismatch += edit_distance(ref, hyp).distance() != oracle::exhaustive_distance(ref, hyp);
  }
  const double secs = seconds_since(t0);
  out.require(worst_matmul <= kOracleTol, "matmul within tolerance");
  out.require(worst_attn <= kOracleTol, "attention within tolerance");
  out.require(worst_swqf <= kOracleTol, "window Q-Former within tolerance");
  out.require(edit_mismatch == 0, "edit distance exact");
  out.require(secs < kOracleSeconds, "runtime under budget");
  out.note(std::to_string(kOracleInstances) + " instances each: matmul " + sci(worst_matmul) + ", attention " +
           sci(worst_attn) + ", window Q-Former " + sci(worst_swqf) + ", edit-distance mismatches " +
           std::to_string(edit_mismatch) + "; " + fixed(secs, 1) + " s");
  return out;
}

// ---- C3 -----------------------------------------------------------------------------------

Outcome criterion_windows() {
  Outcome out;
  std::size_t plans = 0;
  bool coverage = true, formula = true, padding = true;
  for (std::size_t T = 1; T <= 64; ++T) {
    for (std::size_t w = 1; w <= 64; ++w) {
      for (std::size_t stride = 1; stride <= w; ++stride) {
        const WindowPlan plan = plan_windows(T, {w, stride});
        const std::size_t over = T > w ? T - w : 0;
        formula = formula && plan.count() == (over + stride - 1) / stride + 1;
        std::vector<std::uint8_t> hit(T, 0);
        for (std::size_t s : plan.starts) {
          for (std::size_t f = s; f < std::min(s + w, T); ++f) hit[f] = 1;
        }
        coverage = coverage && std::all_of(hit.begin(), hit.end(), [](std::uint8_t h) { return h != 0; });
        padding = padding && plan.padded_frames >= plan.starts.back() + w;
        ++plans;
      }
    }
  }
  out.require(coverage, "every frame covered for T <= 64");
  out.require(formula, "window count formula");
  out.require(padding, "padded length holds every window");

  Rng rng(3);
  double worst_order = 0.0, worst_mass = 0.0;
  bool zero_pad_values = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t w = 2 + rng.index(6);
    const std::size_t stride = 1 + rng.index(w);
    const std::size_t T = 1 + rng.index(30);
    const WindowQFormer module(8, 1 + rng.index(4), 2, {w, stride}, PoolMode::kMean, rng);
    const Tensor audio = oracle::random_tensor({T, 8}, rng, 1.0 + 4.0 * rng.uniform(0.0, 1.0));
    const Segmentation seg = segment_windows(audio, module.window());
    for (std::size_t i = 0; i < seg.windows.size(); ++i) {
      for (std::size_t f = 0; f < w; ++f) {
        if (seg.valid[i][f]) continue;
        for (std::size_t c = 0; c < 8; ++c) zero_pad_values = zero_pad_values && seg.windows[i].at(f, c) == 0.0;
      }
    }
    const QFormerOutput reference = module.forward(seg);
    for (double m : reference.diagnostics.padded_mass) worst_mass = std::max(worst_mass, m);
    std::vector<std::size_t> order(seg.windows.size());
    std::iota(order.begin(), order.end(), 0);
    for (int s = 0; s < 5; ++s) {
      std::shuffle(order.begin(), order.end(), rng.engine());
      Segmentation shuffled = seg;
      for (std::size_t i = 0; i < order.size(); ++i) {
        shuffled.windows[i] = seg.windows[order[i]];
        shuffled.valid[i] = seg.valid[order[i]];
      }
      const Tensor got = module.forward(shuffled).queries;
      for (std::size_t i = 0; i < got.numel(); ++i) {
        worst_order = std::max(worst_order, std::abs(got.data()[i] - reference.queries.data()[i]));
      }
    }
  }
  out.require(worst_order <= kOrderTol, "window order invariance");
  out.require(worst_mass == 0.0, "zero attention mass on padded frames");
  out.require(zero_pad_values, "padded frames are zero");

  bool length_fixed = true;
  FusionConfig fc;
  fc.window = {4, 2};
  fc.queries = 3;
  fc.heads = 2;
  for (FusionVariant v : {FusionVariant::kSwqfCrossAttn, FusionVariant::kPlainQFormer}) {
    fc.variant = v;
    const FusionModule module(fc, 8, 6, rng);
    for (std::size_t T = 1; T <= 64; T += 7) {
      for (std::size_t lv = 1; lv <= 9; lv += 2) {
        const FusionOutput f = module.fuse(oracle::random_tensor({T, 8}, rng), oracle::random_tensor({lv, 6}, rng));
        length_fixed = length_fixed && f.fused.dim(0) == fc.queries;
      }
    }
  }
  out.require(length_fixed, "fused length equals the query count for every T and Lv");
  out.note(std::to_string(plans) + " window plans checked; order deviation " + sci(worst_order) +
           "; max padded mass " + sci(worst_mass));
  return out;
}

// ---- shared experiment runs (C4, C6, C7, C5) ----------------------------------------------

struct Timed {
  std::vector<double> run_seconds;
  Clock::time_point last = Clock::now();

  ProgressFn progress(const std::string& tag) {
    last = Clock::now();
    return [this, tag](const std::string& msg) {
      run_seconds.push_back(seconds_since(last));
      last = Clock::now();
      std::cerr << "  [" << tag << "] " << msg << " (" << fixed(run_seconds.back(), 1) << " s)" << std::endl;
    };
  }
  double max() const { return run_seconds.empty() ? 0.0 : *std::max_element(run_seconds.begin(), run_seconds.end()); }
};

ResultTable arm_table(const ExperimentConfig& cfg, const Dataset& data, const std::string& arm,
                      const ArtifactSink& sink, Timed& timer) {
  ResultTable table;
  table.title = arm;
  table.unit = unit_for(cfg.task.language);
  table.config = config_echo(cfg);
  for (std::size_t r = 0; r < cfg.replicates; ++r) table.seeds.push_back(replicate_seed(cfg.seed, r));
  ResultTable::Row row{arm, {}};
  const ProgressFn progress = timer.progress(arm);
  for (std::size_t r = 0; r < cfg.replicates; ++r) {
    const RunResult run = train_and_evaluate(cfg, data, arm_config(cfg, arm), r, arm);
    sink.write_run(run, table.config);
    progress(arm + " replicate " + std::to_string(r + 1) + ": rate " + fixed(run.eval.rate));
    row.rates.push_back(run.eval.rate);
  }
  table.rows.push_back(row);
  sink.write(arm + ".json", table_json(table));
  return table;
}

// Parses a written table back and checks its shape.
bool well_formed(const fs::path& path, const std::vector<std::string>& labels, std::size_t replicates) {
  std::ifstream in(path);
  if (!in) return false;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    if (!j.contains("title") || !j.contains("config") || j.at("seeds").size() != replicates) return false;
    const auto& rows = j.at("rows");
    if (rows.size() != labels.size()) return false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].at("label") != labels[i]) return false;
      const auto rates = rows[i].at("rates").get<std::vector<double>>();
      if (rates.size() != replicates) return false;
      double total = 0.0;
      for (double r : rates) {
        if (!std::isfinite(r) || r < 0.0) return false;
        total += r;
      }
      if (std::abs(total / static_cast<double>(rates.size()) - rows[i].at("mean").get<double>()) > 1e-12) return false;
    }
    return j.at("config").get<std::string>().find("seed") != std::string::npos;
  } catch (const std::exception&) {
    return false;
  }
}

struct FusionRuns {
  ExperimentConfig cfg;
  ResultTable audio_only, audio_swqf, variants, sweep;
  Timed timer;
  fs::path dir;
};

void run_fusion_experiments(FusionRuns& runs, bool need_sweep, bool need_audio_swqf) {
  runs.cfg = default_experiment();
  const Dataset data = experiment_dataset(runs.cfg);
  const ArtifactSink sink{runs.dir.string()};
  runs.audio_only = arm_table(runs.cfg, data, "audio-only", sink, runs.timer);
  runs.variants = compare_fusion(runs.cfg, data, sink, runs.timer.progress("fusion"));
  sink.write("compare-fusion.json", table_json(runs.variants));
  sink.write("compare-fusion.txt", table_text(runs.variants));
  if (need_sweep) {
    runs.sweep = sweep_window(runs.cfg, data, sink, runs.timer.progress("sweep"));
    sink.write("sweep-window.json", table_json(runs.sweep));
    sink.write("sweep-window.txt", table_text(runs.sweep));
  }
  if (need_audio_swqf) runs.audio_swqf = arm_table(runs.cfg, data, "audio-swqf", sink, runs.timer);
}

// ---- C4 -----------------------------------------------------------------------------------

Outcome criterion_fusion_benefit(const FusionRuns& runs) {
  Outcome out;
  const ExperimentConfig& cfg = runs.cfg;
  out.require(cfg.task.audio_corruption == 0.3, "corruption probability 0.3");
  out.require(cfg.task.vocab == 64 && cfg.model.width == 64, "V = 64 and d = 64");
  out.require(cfg.train.schedule.total_steps <= kMaxSteps, "step budget");
  out.require(cfg.replicates == 3, "three seeds");
  out.require(runs.timer.max() < kRunSeconds, "every run under the time budget");
  const double audio = runs.audio_only.row("audio-only").mean();
  const double av = runs.variants.row("swqf-crossattn").mean();
  const double reduction = audio > 0.0 ? (audio - av) / audio : 0.0;
  out.require(reduction >= kFusionMinReduction, "relative error reduction >= 20%");
  out.note("audio-only mean WER " + fixed(audio) + ", swqf-crossattn " + fixed(av) + ", reduction " +
           fixed(100.0 * reduction, 1) + "%; slowest run " + fixed(runs.timer.max(), 1) + " s");
  return out;
}

// ---- C6 -----------------------------------------------------------------------------------

Outcome criterion_sweep(const FusionRuns& runs) {
  Outcome out;
  const std::size_t n = runs.cfg.replicates;
  out.require(well_formed(runs.dir / "compare-fusion.json", {"linear-concat", "plain-qformer", "swqf-crossattn"}, n),
              "fusion variant report well-formed");
  std::vector<std::string> sweep_labels;
  for (std::size_t w : {32, 64, 128, 256}) sweep_labels.push_back("swqf-w" + std::to_string(w));
  out.require(runs.cfg.sweep_windows == std::vector<std::size_t>{32, 64, 128, 256}, "window grid 32..256");
  out.require(well_formed(runs.dir / "sweep-window.json", sweep_labels, n), "window sweep report well-formed");
  const double swqf = runs.variants.row("swqf-crossattn").mean();
  const double linear = runs.variants.row("linear-concat").mean();
  out.require(swqf <= linear, "swqf-crossattn mean <= linear-concat mean");
  std::string sweep;
  for (const auto& r : runs.sweep.rows) sweep += " " + r.label + "=" + fixed(r.mean());
  out.note("linear-concat " + fixed(linear) + ", plain-qformer " + fixed(runs.variants.row("plain-qformer").mean()) +
           ", swqf-crossattn " + fixed(swqf) + ";" + sweep);
  return out;
}

// ---- C7 -----------------------------------------------------------------------------------

Outcome criterion_unimodal(const FusionRuns& runs) {
  Outcome out;
  out.require(well_formed(runs.dir / "audio-swqf.json", {"audio-swqf"}, runs.cfg.replicates),
              "audio-swqf report well-formed");
  out.require(fs::exists(runs.dir / "audio-swqf-r1.eval.jsonl"), "per-run evaluation report written");
  out.note("audio-swqf mean WER " + fixed(runs.audio_swqf.row("audio-swqf").mean()) + " (audio-only " +
           fixed(runs.audio_only.row("audio-only").mean()) + ", reported only)");
  return out;
}

// ---- C5 -----------------------------------------------------------------------------------

Outcome criterion_distillation(const fs::path& dir) {
  Outcome out;
  ExperimentConfig cfg = default_experiment();
  out.require(cfg.distill.kd.alpha == 0.7 && cfg.distill.kd.beta == 0.3 && cfg.distill.kd.temperature == 2.0,
              "kd weights 0.7 / 0.3 and temperature 2");
  Timed timer;
  const DistillOutcome d = run_distillation(cfg, ArtifactSink{dir.string()}, timer.progress("distill"));
  ArtifactSink{dir.string()}.write("distill.json", table_json(d.table));
  ArtifactSink{dir.string()}.write("distill.txt", table_text(d.table));
  const double base = d.table.row("student-no-distill").mean();
  const double hard = d.table.row("student-pseudo-label").mean();
  const double kd = d.table.row("student-distilled").mean();
  out.require(d.table.row("student-distilled").rates.size() == 3, "three seeds");
  out.require(kd <= hard, "distilled <= pseudo-label");
  out.require(kd < base, "distilled < undistilled student");
  out.note("teacher " + fixed(d.table.row("teacher").mean()) + ", undistilled " + fixed(base) + ", pseudo-label " +
           fixed(hard) + ", distilled " + fixed(kd));
  return out;
}

// ---- C8 -----------------------------------------------------------------------------------

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.numel() == b.numel() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

std::vector<Tensor> snapshot_frozen(const Model& model) {
  std::vector<Tensor> out;
  for (const auto& p : model.parameters()) {
    if (!p.tensor.requires_grad()) out.push_back(p.tensor.clone());
  }
  return out;
}

bool frozen_unchanged(const Model& model, const std::vector<Tensor>& before) {
  std::size_t i = 0;
  for (const auto& p : model.parameters()) {
    if (p.tensor.requires_grad()) continue;
    if (i >= before.size() || !same_bits(p.tensor, before[i++])) return false;
  }
  return i == before.size();
}

Outcome criterion_training_contracts() {
  Outcome out;
  bool schedule_ok = true;
  for (std::size_t total : {100u, 1000u, 1500u, 3000u}) {
    ScheduleConfig sc;
    sc.total_steps = total;
    schedule_ok = schedule_ok && sc.peak_lr == kPeakLr && sc.warmup_fraction == kWarmupFraction;
    const std::size_t warm = sc.warmup_steps();
    schedule_ok = schedule_ok && warm == static_cast<std::size_t>(std::ceil(kWarmupFraction * total));
    schedule_ok = schedule_ok && lr_at(0, sc) == 0.0;
    schedule_ok = schedule_ok && std::abs(lr_at(warm, sc) - kPeakLr) <= kLrTol;
    std::size_t argmax = 0;
    for (std::size_t s = 0; s < total; ++s) {
      if (lr_at(s, sc) > lr_at(argmax, sc)) argmax = s;
      schedule_ok = schedule_ok && lr_at(s, sc) <= kPeakLr + kLrTol;
    }
    schedule_ok = schedule_ok && argmax == warm;
    // Both sides of the junction step by at most one warmup increment.
    const double step = kPeakLr / static_cast<double>(warm);
    schedule_ok = schedule_ok && std::abs(lr_at(warm, sc) - lr_at(warm - 1, sc)) <= step + kLrTol;
    schedule_ok = schedule_ok && std::abs(lr_at(warm + 1, sc) - lr_at(warm, sc)) <= step + kLrTol;
  }
  out.require(schedule_ok, "warmup/cosine schedule: 0 at step 0, peak 1e-4 at 3%, continuous junction");

  ExperimentConfig cfg = default_experiment();
  cfg.corpus.samples = 120;
  cfg.train.schedule = ScheduleConfig{};
  cfg.train.schedule.total_steps = 40;
  cfg.resolve();
  out.require(cfg.train.clip_norm == kClipNorm, "clip norm 1.0");
  const Dataset data = experiment_dataset(cfg);
  const TrainingJob job{&data.train, nullptr, nullptr, {}};

  auto run_once = [&](Model& model) {
    TrainConfig tc = cfg.train;
    tc.seed = 7;
    return train_model(model, job, tc);
  };
  Model a = Model::build(cfg.model, 11);
  const std::vector<Tensor> frozen_a = snapshot_frozen(a);
  const TrainReport ra = run_once(a);
  Model b = Model::build(cfg.model, 11);
  const TrainReport rb = run_once(b);

  bool lr_trace = ra.steps.size() == cfg.train.schedule.total_steps && ra.steps.front().lr == 0.0;
  double worst_clipped = 0.0;
  std::size_t clipped_steps = 0;
  for (const auto& s : ra.steps) {
    lr_trace = lr_trace && s.lr == lr_at(s.step, cfg.train.schedule);
    worst_clipped = std::max(worst_clipped, s.clipped_norm);
    clipped_steps += s.grad_norm > kClipNorm;
  }
  out.require(lr_trace, "recorded learning rates follow the schedule");
  out.require(worst_clipped <= kClipNorm + kClipSlack, "post-clip norm <= 1");
  out.require(!frozen_a.empty() && frozen_unchanged(a, frozen_a), "frozen encoder parameters bit-identical");

  bool same_trace = ra.steps.size() == rb.steps.size();
  for (std::size_t i = 0; same_trace && i < ra.steps.size(); ++i) {
    same_trace = std::memcmp(&ra.steps[i].loss, &rb.steps[i].loss, sizeof(double)) == 0;
  }
  out.require(same_trace, "same seed gives a bit-identical loss trace");

  Model student = Model::build(arm_config(cfg, "audio-only"), 12);
  student.attach_decoder_lora(4);
  const std::vector<Tensor> frozen_s = snapshot_frozen(student);
  run_once(student);
  out.require(frozen_unchanged(student, frozen_s), "LoRA base weights bit-identical");

  out.note(std::to_string(frozen_a.size()) + " frozen tensors (AV), " + std::to_string(frozen_s.size()) +
           " (LoRA student) unchanged; max post-clip norm " + fixed(worst_clipped, 6) + " with " +
           std::to_string(clipped_steps) + "/" + std::to_string(ra.steps.size()) + " steps clipped");
  return out;
}

// ---- C9 -----------------------------------------------------------------------------------

std::string random_text(Rng& rng) {
  static const std::vector<std::string> pieces = {
      "a", "B", "z", "Q", "0", "7", " ", "  ", "\t", "\n", ",", ".", "!", "?", "'", "-", "_", "(", ")",
      "你", "好", "世", "界", "。", "，", "！", "Ａ", "ｂ", "１", "　", "é", "ß", "Ω", "😀", "\xff", "\xe4\xbd"};
  std::string s;
  const std::size_t n = rng.index(24);
  for (std::size_t i = 0; i < n; ++i) s += pieces[rng.index(pieces.size())];
  return s;
}

Outcome criterion_data_contracts(const fs::path& dir) {
  Outcome out;
  std::vector<SampleRecord> records;
  Rng shape_rng(9);
  for (std::size_t s = 0; s < kLeakageSources; ++s) {
    const std::size_t count = 1 + shape_rng.index(8);
    for (std::size_t k = 0; k < count; ++k) {
      SampleRecord r;
      r.id = "s" + std::to_string(s) + "-" + std::to_string(k);
      r.source_id = "src" + std::to_string(s);
      records.push_back(r);
    }
  }
  bool leak_free = true;
  for (std::uint64_t seed = 0; seed < kLeakageSeeds; ++seed) {
    std::vector<SampleRecord> copy = records;
    apply_split(copy, split_by_source(copy, SplitRatios{}, seed));
    std::map<std::string, std::set<Split>> seen;
    for (const auto& r : copy) seen[r.source_id].insert(r.split);
    for (const auto& [src, splits] : seen) leak_free = leak_free && splits.size() == 1;
    leak_free = leak_free && seen.size() == kLeakageSources;
  }
  out.require(leak_free, "no source spans two splits");

  Rng text_rng(10);
  std::size_t idempotent = 0;
  for (std::size_t i = 0; i < kNormalizeStrings; ++i) {
    const std::string s = random_text(text_rng);
    const Language lang = i % 2 == 0 ? Language::kEnglish : Language::kChinese;
    const std::string once = normalize_text(s, lang);
    idempotent += normalize_text(once, lang) == once;
  }
  out.require(idempotent == kNormalizeStrings, "normalize is idempotent");

  ExperimentConfig cfg = default_experiment();
  cfg.corpus.samples = 200;
  cfg.resolve();
  const Dataset data = experiment_dataset(cfg);
  fs::create_directories(dir);
  const std::string manifest = (dir / "manifest.jsonl").string();
  write_manifest(manifest, data.records);
  out.require(read_manifest(manifest) == data.records, "manifest round-trip exact");

  const Model model = Model::build(cfg.model, 5);
  const std::string ckpt = (dir / "model.ckpt").string();
  save_checkpoint(ckpt, model, config_echo(cfg));
  const Checkpoint back = load_checkpoint(ckpt);
  const ParameterList pa = model.parameters(), pb = back.model.parameters();
  bool exact = pa.size() == pb.size() && back.config_echo == config_echo(cfg) && back.seed == model.seed();
  for (std::size_t i = 0; exact && i < pa.size(); ++i) {
    exact = pa[i].name == pb[i].name && pa[i].tensor.shape() == pb[i].tensor.shape() &&
            pa[i].tensor.requires_grad() == pb[i].tensor.requires_grad() && same_bits(pa[i].tensor, pb[i].tensor);
  }
  const ModelInput in = model_input(data.test.front());
  exact = exact && model.greedy_decode(in, 16) == back.model.greedy_decode(in, 16);
  out.require(exact, "checkpoint round-trip exact");

  out.note(std::to_string(kLeakageSeeds) + " split seeds over " + std::to_string(records.size()) + " records / " +
           std::to_string(kLeakageSources) + " sources; " + std::to_string(kNormalizeStrings) +
           " strings normalized; " + std::to_string(data.records.size()) + " manifest records; " +
           std::to_string(pa.size()) + " checkpoint tensors");
  return out;
}

// ---- C10 ----------------------------------------------------------------------------------

double oracle_rate(const std::string& ref, const std::string& hyp, ScoringUnit unit) {
  const auto r = split_units(ref, unit);
  const auto h = split_units(hyp, unit);
  return static_cast<double>(oracle::exhaustive_distance(r, h)) / static_cast<double>(r.size());
}

Outcome criterion_metrics() {
  Outcome out;
  const double wer = error_rate({"the cat sat"}, {"the cat sit"}, ScoringUnit::kWord);
  const double cer = error_rate({"你好"}, {"你好"}, ScoringUnit::kChar);
  const double empty = error_rate({"a b c"}, {""}, ScoringUnit::kWord);
  const EditOps ops = edit_distance(split_units("a b c", ScoringUnit::kWord), split_units("", ScoringUnit::kWord));
  out.require(std::abs(wer - 1.0 / 3.0) <= kMetricTol, "WER = 1/3");
  out.require(cer == 0.0, "CER = 0");
  out.require(empty == 1.0 && ops.deletions == 3 && ops.insertions == 0 && ops.substitutions == 0,
              "empty hypothesis scores every reference unit as a deletion");
  out.require(std::abs(wer - oracle_rate("the cat sat", "the cat sit", ScoringUnit::kWord)) <= kMetricTol &&
                  cer == oracle_rate("你好", "你好", ScoringUnit::kChar) &&
                  empty == oracle_rate("a b c", "", ScoringUnit::kWord),
              "spot values match the exhaustive oracle");
  out.note("WER " + fixed(wer, 6) + ", CER " + fixed(cer, 6) + ", empty-hypothesis WER " + fixed(empty, 6) + " (" +
           std::to_string(ops.deletions) + " deletions)");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string out_dir = "acceptance-artifacts";
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_option("--out", out_dir, "artifact directory");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  const fs::path root(out_dir);
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes.push_back(std::string("error: ") + e.what());
    }
    failures += !o.pass;
    std::cout << "C" << id << " " << name << ": " << (o.pass ? "PASS" : "FAIL") << " (" << fixed(seconds_since(t0), 1)
              << " s)" << std::endl;
    for (const auto& n : o.notes) std::cout << "    " << n << std::endl;
  };

  report(1, "gradient checks", criterion_gradients);
  report(2, "oracle equivalence", criterion_oracles);
  report(3, "window invariants", criterion_windows);

  FusionRuns runs;
  runs.dir = root / "fusion";
  bool fusion_ready = false;
  std::string fusion_error;
  if (wanted(4) || wanted(6) || wanted(7)) {
    try {
      run_fusion_experiments(runs, wanted(6), wanted(7));
      fusion_ready = true;
    } catch (const std::exception& e) {
      fusion_error = e.what();
    }
  }
  auto fusion_step = [&](Outcome (*fn)(const FusionRuns&)) {
    return [&, fn] {
      if (!fusion_ready) throw std::runtime_error("fusion runs failed: " + fusion_error);
      return fn(runs);
    };
  };
  report(4, "fusion benefit", fusion_step(criterion_fusion_benefit));
  report(5, "distillation benefit", [&] { return criterion_distillation(root / "distill"); });
  report(6, "fusion-variant sweep", fusion_step(criterion_sweep));
  report(7, "unimodal insertion", fusion_step(criterion_unimodal));
  report(8, "training-recipe contracts", criterion_training_contracts);
  report(9, "data contracts", [&] { return criterion_data_contracts(root / "data"); });
  report(10, "metric spot values", criterion_metrics);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
