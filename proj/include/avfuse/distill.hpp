#pragma once

#include <span>
#include <string>
#include <vector>

#include "avfuse/data.hpp"
#include "avfuse/model.hpp"
#include "avfuse/tensor.hpp"

namespace avf {

enum class LabelSource {
  kTeacher,    // greedy decode of the teacher
  kReference,  // ground-truth targets (upper bound, for diagnostics)
};

const char* to_string(LabelSource source);
LabelSource parse_label_source(const std::string& s);

struct DistillConfig {
  double alpha = 0.7;        // cross-entropy weight
  double beta = 0.3;         // KL weight
  double temperature = 2.0;  // τ
  bool kl_tau_square = true;
  LabelSource labels = LabelSource::kTeacher;

  // α, β ≥ 0, α > β, τ ≥ 1.
  void validate() const;
};

// softmax(logits / τ) along the last axis.
Tensor soften(const Tensor& logits, double temperature);

std::vector<int> generate_pseudo_labels(const Model& teacher, const SampleRecord& sample,
                                        std::size_t max_len);
std::vector<std::vector<int>> generate_pseudo_labels(const Model& teacher,
                                                     const std::vector<SampleRecord>& samples,
                                                     std::size_t max_len);

// Teacher-forcing pair for a label sequence: input [BOS, y...], targets [y..., EOS].
std::vector<int> decoder_input(std::span<const int> labels);
std::vector<int> decoder_targets(std::span<const int> labels);

// Mean over non-PAD rows of Σ_v p_t (log p_t − log p_s) with both sides softened.
Tensor kd_kl(const Tensor& student_logits, const Tensor& teacher_logits, std::span<const int> labels,
             double temperature);

// α·CE(student, labels) + β·[τ²]·KL(soften(teacher) ‖ soften(student)); rows
// whose label is PAD are excluded. Teacher logits are treated as constants.
Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, std::span<const int> labels,
               const DistillConfig& cfg);

}  // namespace avf
