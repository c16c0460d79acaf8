#include "avfuse/distill.hpp"

#include "avfuse/error.hpp"
#include "avfuse/train.hpp"

namespace avf {

const char* to_string(LabelSource source) {
  return source == LabelSource::kTeacher ? "teacher" : "reference";
}

LabelSource parse_label_source(const std::string& s) {
  if (s == "teacher") return LabelSource::kTeacher;
  if (s == "reference") return LabelSource::kReference;
  throw ConfigError("unknown pseudo-label source '" + s + "' (expected teacher|reference)");
}

void DistillConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("distillation weights must be non-negative");
  if (!(alpha > beta)) throw ConfigError("distillation requires alpha > beta");
  if (!(temperature >= 1.0)) throw ConfigError("distillation temperature must be at least 1");
}

Tensor soften(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  return softmax(scale(logits, 1.0 / temperature), logits.rank() - 1);
}

std::vector<int> generate_pseudo_labels(const Model& teacher, const SampleRecord& sample,
                                        std::size_t max_len) {
  return teacher.greedy_decode(model_input(sample), max_len);
}

std::vector<std::vector<int>> generate_pseudo_labels(const Model& teacher,
                                                     const std::vector<SampleRecord>& samples,
                                                     std::size_t max_len) {
  std::vector<std::vector<int>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(generate_pseudo_labels(teacher, s, max_len));
  return out;
}

std::vector<int> decoder_input(std::span<const int> labels) {
  std::vector<int> in{kBos};
  in.insert(in.end(), labels.begin(), labels.end());
  return in;
}

std::vector<int> decoder_targets(std::span<const int> labels) {
  std::vector<int> out(labels.begin(), labels.end());
  out.push_back(kEos);
  return out;
}

namespace {

void check_aligned(const Tensor& student, const Tensor& teacher, std::span<const int> labels) {
  if (student.rank() != 2 || teacher.rank() != 2 || student.shape() != teacher.shape() ||
      student.dim(0) != labels.size()) {
    throw ContractError("kd_loss: student " + shape_string(student.shape()) + ", teacher " +
                        shape_string(teacher.shape()) + " and " + std::to_string(labels.size()) +
                        " labels are not aligned");
  }
}

}  // namespace

Tensor kd_kl(const Tensor& student_logits, const Tensor& teacher_logits, std::span<const int> labels,
             double temperature) {
  check_aligned(student_logits, teacher_logits, labels);
  const std::size_t rows = labels.size();
  std::size_t count = 0;
  for (int l : labels) count += l != kPad;
  if (count == 0) throw ContractError("kd_loss: every position is padding");
  std::vector<double> weight(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] != kPad) weight[i] = 1.0 / static_cast<double>(count);
  }
  const Tensor teacher = teacher_logits.detach();
  const Tensor p_t = soften(teacher, temperature);
  const Tensor log_p_t = log_softmax(scale(teacher, 1.0 / temperature), 1);
  const Tensor log_p_s = log_softmax(scale(student_logits, 1.0 / temperature), 1);
  const Tensor per_row = reduce_sum(mul(p_t, sub(log_p_t, log_p_s)), 1);
  return sum(mul(per_row, Tensor::from({rows}, std::move(weight))));
}

Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, std::span<const int> labels,
               const DistillConfig& cfg) {
  cfg.validate();
  check_aligned(student_logits, teacher_logits, labels);
  Tensor loss = scale(masked_cross_entropy(student_logits, labels), cfg.alpha);
  if (cfg.beta == 0.0) return loss;
  const double tau_factor = cfg.kl_tau_square ? cfg.temperature * cfg.temperature : 1.0;
  return add(loss, scale(kd_kl(student_logits, teacher_logits, labels, cfg.temperature),
                         cfg.beta * tau_factor));
}

}  // namespace avf
