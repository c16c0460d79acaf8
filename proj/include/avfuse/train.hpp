#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "avfuse/tensor.hpp"

namespace avf {

struct ScheduleConfig {
  double peak_lr = 1e-4;
  double warmup_fraction = 0.03;
  std::size_t total_steps = 1000;
  double floor_lr = 0.0;

  void validate() const;
  // ceil(warmup_fraction · total_steps)
  std::size_t warmup_steps() const;
};

// Linear warmup from 0 to peak, then cosine decay to floor. Steps past the
// end return floor.
double lr_at(std::size_t step, const ScheduleConfig& cfg);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

class OptimizerState {
 public:
  OptimizerState(std::vector<Tensor> params, AdamWConfig cfg = {});

  // Bias-corrected update of every parameter that requires grad and holds a
  // gradient. Any non-finite gradient aborts the step before anything changes.
  void step(double lr);

  std::size_t steps() const { return step_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::span<const double> first_moment(std::size_t i) const { return m_[i]; }
  std::span<const double> second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

void adamw_step(OptimizerState& state, double lr);

// Returns the global L2 norm before clipping; gradients are rescaled in place
// when it exceeds max_norm.
double clip_grad_norm(std::span<const Tensor> params, double max_norm);
double global_grad_norm(std::span<const Tensor> params);

// Mean of -log softmax(logits)[i, labels[i]] over rows whose label is not PAD.
Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> labels);

struct TrainConfig {
  ScheduleConfig schedule;
  AdamWConfig adam;
  std::size_t batch_size = 16;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;      // before clipping
  double clipped_norm = 0.0;   // after clipping
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::size_t epochs = 0;
};

// Shuffled fixed-size batches; the order is a pure function of (seed, epoch).
// A trailing partial batch is dropped unless the dataset is smaller than one
// batch.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t dataset_size, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch);

using BatchLoss = std::function<Tensor(std::span<const std::size_t> batch)>;

// Runs schedule.total_steps optimizer steps over `params`. A non-finite loss
// or gradient aborts with a NumericError naming the step.
TrainReport fit(const std::vector<Tensor>& params, std::size_t dataset_size, const BatchLoss& loss,
                const TrainConfig& cfg);

std::string train_report_jsonl(const TrainReport& report, const std::string& config_echo);
void write_train_report(const std::string& path, const TrainReport& report, const std::string& config_echo);

}  // namespace avf
