#include <gtest/gtest.h>

#include <cmath>

#include "avfuse/distill.hpp"
#include "avfuse/error.hpp"
#include "avfuse/rng.hpp"
#include "avfuse/train.hpp"
#include "oracles.hpp"

namespace avf {
namespace {

using oracle::random_tensor;

TEST(Soften, WorkedValues) {
  const Tensor p = soften(Tensor::from({2}, {0.0, std::log(9.0)}), 2.0);
  EXPECT_NEAR(p.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(p.data()[1], 0.75, 1e-15);
  const Tensor logits = Tensor::from({3}, {0.1, -2.0, 1.5});
  const Tensor plain = softmax(logits, 0);
  const Tensor one = soften(logits, 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(one.data()[i], plain.data()[i]);
  const Tensor flat = soften(logits, 1e6);
  for (double v : flat.data()) EXPECT_LT(std::abs(v - 1.0 / 3.0), 1e-5);
  EXPECT_THROW(soften(logits, 0.0), ConfigError);
}

TEST(DistillConfig, Validation) {
  DistillConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.alpha = 0.3;
  cfg.beta = 0.7;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.beta = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.temperature = 0.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parse_label_source("teacher"), LabelSource::kTeacher);
  EXPECT_THROW(parse_label_source("oracle"), ConfigError);
}

TEST(KdLoss, TwoClassClosedForm) {
  // Teacher softened at τ=2 is (1/4, 3/4); the student is uniform.
  const Tensor teacher = Tensor::from({1, 2}, {0.0, std::log(9.0)});
  const Tensor student = Tensor::from({1, 2}, {0.0, 0.0});
  const std::vector<int> labels{1};
  const DistillConfig cfg;
  const double ce = std::log(2.0);
  const double kl = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
  const double expected = 0.7 * ce + 0.3 * 4.0 * kl;
  EXPECT_NEAR(kd_loss(student, teacher, labels, cfg).item(), expected, 1e-15);
  EXPECT_NEAR(kd_kl(student, teacher, labels, 2.0).item(), kl, 1e-15);
  DistillConfig no_square = cfg;
  no_square.kl_tau_square = false;
  EXPECT_NEAR(kd_loss(student, teacher, labels, no_square).item(), 0.7 * ce + 0.3 * kl, 1e-15);
}

TEST(KdLoss, IdenticalLogitsLeaveOnlyCrossEntropy) {
  Rng rng(1);
  const Tensor logits = random_tensor({4, 6}, rng);
  const std::vector<int> labels{1, 5, kPad, 3};
  const DistillConfig cfg;
  EXPECT_NEAR(kd_kl(logits, logits, labels, 2.0).item(), 0.0, 1e-15);
  EXPECT_NEAR(kd_loss(logits, logits, labels, cfg).item(),
              0.7 * masked_cross_entropy(logits, labels).item(), 1e-15);
}

TEST(KdLoss, BetaZeroIsBitEqualToCrossEntropy) {
  Rng rng(2);
  const Tensor s = random_tensor({5, 7}, rng);
  const Tensor t = random_tensor({5, 7}, rng);
  const std::vector<int> labels{0, 6, 2, 3, 1};
  DistillConfig cfg;
  cfg.alpha = 1.0;
  cfg.beta = 0.0;
  EXPECT_EQ(kd_loss(s, t, labels, cfg).item(), masked_cross_entropy(s, labels).item());
}

TEST(KdLoss, KlNonNegativeAndPadRowsIgnored) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Tensor s = random_tensor({3, 5}, rng, 3.0);
    const Tensor t = random_tensor({3, 5}, rng, 3.0);
    ASSERT_GE(kd_kl(s, t, std::vector<int>{1, 2, 3}, 2.0).item(), 0.0);
  }
  const Tensor s = random_tensor({2, 4}, rng);
  const Tensor t = random_tensor({2, 4}, rng);
  Tensor s2 = s.clone(), t2 = t.clone();
  for (std::size_t c = 0; c < 4; ++c) {
    s2.mutable_data()[4 + c] = 100.0 * static_cast<double>(c);
    t2.mutable_data()[4 + c] = -50.0;
  }
  const std::vector<int> labels{3, kPad};
  EXPECT_EQ(kd_loss(s, t, labels, {}).item(), kd_loss(s2, t2, labels, {}).item());
}

TEST(KdLoss, GradCheckAndTeacherDetached) {
  Rng rng(4);
  const Tensor s = random_tensor({4, 6}, rng, 1.0, true);
  Tensor t = random_tensor({4, 6}, rng, 1.0, true);
  const std::vector<int> labels{1, kPad, 5, 0};
  const Tensor inputs[] = {s};
  EXPECT_LT(grad_check([&] { return kd_loss(s, t, labels, {}); }, inputs).max_rel_error, 1e-6);
  kd_loss(s, t, labels, {}).backward();
  EXPECT_TRUE(s.has_grad());
  EXPECT_FALSE(t.has_grad());
}

TEST(KdLoss, ShapeErrors) {
  const Tensor a = Tensor::zeros({3, 4});
  const Tensor b = Tensor::zeros({3, 5});
  EXPECT_THROW(kd_loss(a, b, std::vector<int>{1, 1, 1}, {}), ContractError);
  EXPECT_THROW(kd_loss(a, a, std::vector<int>{1, 1}, {}), ContractError);
}

TEST(TeacherForcing, InputAndTargets) {
  const std::vector<int> y{5, 9, 4};
  EXPECT_EQ(decoder_input(y), (std::vector<int>{kBos, 5, 9, 4}));
  EXPECT_EQ(decoder_targets(y), (std::vector<int>{5, 9, 4, kEos}));
}

TEST(PseudoLabels, BatchMatchesPerSampleLoop) {
  ModelConfig mc;
  mc.width = 16;
  mc.encoder_layers = 1;
  mc.decoder_layers = 1;
  mc.fusion.queries = 4;
  const Model teacher = Model::build(mc, 9);
  CorpusConfig cc;
  cc.samples = 12;
  cc.sources = 3;
  const auto records = generate_corpus(SynthTaskConfig{}, cc, 2);
  const auto batch = generate_pseudo_labels(teacher, records, 10);
  ASSERT_EQ(batch.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(batch[i], teacher.greedy_decode(model_input(records[i]), 10));
    EXPECT_EQ(batch[i], generate_pseudo_labels(teacher, records[i], 10));
  }
}

}  // namespace
}  // namespace avf
