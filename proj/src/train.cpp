#include "avfuse/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "avfuse/error.hpp"
#include "avfuse/model.hpp"
#include "avfuse/rng.hpp"

namespace avf {

using nlohmann::json;

void ScheduleConfig::validate() const {
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("warmup fraction must lie in [0, 1)");
  }
  if (!(peak_lr > 0.0)) throw ConfigError("peak learning rate must be positive");
  if (!(floor_lr >= 0.0 && floor_lr <= peak_lr)) throw ConfigError("floor LR must lie in [0, peak]");
  if (total_steps == 0) throw ConfigError("total steps must be positive");
}

std::size_t ScheduleConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
}

double lr_at(std::size_t step, const ScheduleConfig& cfg) {
  cfg.validate();
  if (step >= cfg.total_steps) return cfg.floor_lr;
  const std::size_t warmup = cfg.warmup_steps();
  if (step < warmup) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(cfg.total_steps - warmup);
  return cfg.floor_lr +
         (cfg.peak_lr - cfg.floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimizerState::OptimizerState(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void OptimizerState::step(double lr) {
  for (const auto& p : params_) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient; optimizer step aborted");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.requires_grad() || !p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.epsilon);
      if (cfg_.weight_decay != 0.0) w[k] -= lr * cfg_.weight_decay * w[k];
      w[k] -= lr * update;
    }
  }
}

void adamw_step(OptimizerState& state, double lr) { state.step(lr); }

double global_grad_norm(std::span<const Tensor> params) {
  double total = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) total += g * g;
  }
  return std::sqrt(total);
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ContractError("cross entropy: " + std::to_string(labels.size()) + " labels for logits " +
                        shape_string(logits.shape()));
  }
  std::vector<int> safe(labels.begin(), labels.end());
  std::vector<double> weight(labels.size(), 0.0);
  std::size_t count = 0;
  for (int l : labels) count += l != kPad;
  if (count == 0) throw ContractError("cross entropy: every position is padding");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kPad) {
      safe[i] = 0;
    } else {
      weight[i] = -1.0 / static_cast<double>(count);
    }
  }
  const Tensor picked = pick(log_softmax(logits, 1), safe);
  return sum(mul(picked, Tensor::from({labels.size()}, std::move(weight))));
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t dataset_size, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch) {
  if (dataset_size == 0) throw ContractError("cannot batch an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 engine(derive_seed(derive_seed(seed, "batches"), static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), engine);
  std::vector<std::vector<std::size_t>> batches;
  if (dataset_size < batch_size) {
    batches.push_back(order);
    return batches;
  }
  for (std::size_t start = 0; start + batch_size <= dataset_size; start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  }
  return batches;
}

TrainReport fit(const std::vector<Tensor>& params, std::size_t dataset_size, const BatchLoss& loss_fn,
                const TrainConfig& cfg) {
  cfg.schedule.validate();
  if (params.empty()) throw ContractError("fit: no trainable parameters");
  OptimizerState optimizer(params, cfg.adam);
  TrainReport report;
  std::size_t epoch = 0, cursor = 0;
  auto batches = epoch_batches(dataset_size, cfg.batch_size, cfg.seed, epoch);
  for (std::size_t step = 0; step < cfg.schedule.total_steps; ++step) {
    if (cursor == batches.size()) {
      batches = epoch_batches(dataset_size, cfg.batch_size, cfg.seed, ++epoch);
      cursor = 0;
    }
    for (auto p : params) p.zero_grad();
    StepRecord rec;
    rec.step = step;
    rec.lr = lr_at(step, cfg.schedule);
    try {
      const Tensor loss = loss_fn(batches[cursor++]);
      rec.loss = loss.item();
      if (!std::isfinite(rec.loss)) throw NumericError("loss is not finite");
      loss.backward();
      rec.grad_norm = clip_grad_norm(params, cfg.clip_norm);
      if (!std::isfinite(rec.grad_norm)) throw NumericError("gradient norm is not finite");
      rec.clipped_norm = global_grad_norm(params);
      optimizer.step(rec.lr);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    report.steps.push_back(rec);
  }
  report.epochs = epoch + 1;
  return report;
}

std::string train_report_jsonl(const TrainReport& report, const std::string& config_echo) {
  std::string out;
  for (const auto& s : report.steps) {
    const json j = {{"type", "step"},       {"step", s.step},
                    {"loss", s.loss},       {"lr", s.lr},
                    {"grad_norm", s.grad_norm}, {"clipped_norm", s.clipped_norm}};
    out += j.dump() + "\n";
  }
  const json summary = {{"type", "summary"},
                        {"steps", report.steps.size()},
                        {"epochs", report.epochs},
                        {"initial_loss", report.steps.empty() ? 0.0 : report.steps.front().loss},
                        {"final_loss", report.steps.empty() ? 0.0 : report.steps.back().loss},
                        {"config", config_echo}};
  out += summary.dump() + "\n";
  return out;
}

void write_train_report(const std::string& path, const TrainReport& report, const std::string& config_echo) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write train report " + path);
  os << train_report_jsonl(report, config_echo);
}

}  // namespace avf
