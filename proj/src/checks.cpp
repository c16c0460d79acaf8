#include "avfuse/checks.hpp"

#include <cstdio>
#include <functional>

#include "avfuse/distill.hpp"
#include "avfuse/fusion.hpp"
#include "avfuse/layers.hpp"
#include "avfuse/model.hpp"
#include "avfuse/rng.hpp"
#include "avfuse/train.hpp"

namespace avf {

namespace {

Tensor random(Shape shape, Rng& rng, bool grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Frozen parameters receive no gradient by contract, so only trainable ones
// are perturbed.
std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParameterList& params) {
  for (const auto& t : trainable(params)) inputs.push_back(t);
  return inputs;
}

// Scalar loss whose gradient reaches every output coordinate with O(1) weight.
Tensor project(const Tensor& out, const Tensor& proj) { return sum(mul(out, proj)); }

void check(std::vector<GradCheckEntry>& out, std::string name, bool composed,
           const std::function<Tensor()>& fn, const std::vector<Tensor>& inputs) {
  GradCheckEntry e;
  e.name = std::move(name);
  e.composed = composed;
  e.tolerance = composed ? kComposedGradTolerance : kLayerGradTolerance;
  for (const auto& t : inputs) e.coordinates += t.numel();
  e.max_rel_error = grad_check(fn, inputs).max_rel_error;
  out.push_back(std::move(e));
}

}  // namespace

std::vector<GradCheckEntry> gradient_suite(std::uint64_t seed) {
  std::vector<GradCheckEntry> out;
  Rng rng(seed);
  const Tensor x = random({3, 4}, rng, true);
  const Tensor kv = random({5, 4}, rng, true);
  const Tensor proj = random({3, 4}, rng);

  const LinearLayer lin(4, 4, rng);
  ParameterList p;
  lin.collect("linear", p);
  check(out, "linear", false, [&] { return project(lin.forward(x), proj); }, with_params({x}, p));

  LinearLayer adapted(4, 4, rng);
  adapted.attach_lora(2, rng);
  for (double& v : adapted.lora()->up.mutable_data()) v = rng.normal(0.0, 0.5);
  p.clear();
  adapted.collect("lora", p);
  check(out, "lora-linear", false, [&] { return project(lora_forward(adapted, x), proj); },
        with_params({x}, p));

  LayerNorm ln(4);
  for (double& g : ln.gain().mutable_data()) g = rng.normal(1.0, 0.3);
  p.clear();
  ln.collect("norm", p);
  check(out, "layer-norm", false, [&] { return project(ln.forward(x), proj); }, with_params({x}, p));

  const FeedForward ffn(4, 8, rng);
  p.clear();
  ffn.collect("ffn", p);
  check(out, "feed-forward", false, [&] { return project(ffn.forward(x), proj); }, with_params({x}, p));

  const MultiHeadAttention attn(4, 2, rng);
  p.clear();
  attn.collect("attn", p);
  const AttentionMask mask = AttentionMask::keys(3, std::vector<std::uint8_t>{1, 1, 0, 1, 1});
  check(out, "attention", false, [&] { return project(attn.forward(x, kv, &mask), proj); },
        with_params({x, kv}, p));
  const AttentionMask causal = AttentionMask::causal(3);
  check(out, "causal-self-attention", false,
        [&] { return project(attn.forward(x, x, &causal), proj); }, with_params({x}, p));

  const Embedding emb(6, 4, rng);
  p.clear();
  emb.collect("embedding", p);
  const std::vector<int> ids{1, 4, 1};
  check(out, "embedding", false, [&] { return project(emb.forward(ids), proj); }, with_params({}, p));

  const Tensor logits = random({4, 6}, rng, true);
  const Tensor teacher = random({4, 6}, rng);
  const std::vector<int> labels{1, kPad, 5, 0};
  check(out, "cross-entropy", false, [&] { return masked_cross_entropy(logits, labels); }, {logits});
  check(out, "kd-loss", false, [&] { return kd_loss(logits, teacher, labels, DistillConfig{}); }, {logits});

  const QFormer qf(4, 3, 2, rng);
  p.clear();
  qf.collect("qformer", p);
  const Tensor qproj = random({3, 4}, rng);
  check(out, "qformer", false, [&] { return project(qf.forward(kv), qproj); }, with_params({kv}, p));

  const Tensor audio = random({7, 4}, rng, true);
  const Tensor visual = random({3, 6}, rng, true);
  for (auto pool : {PoolMode::kMean, PoolMode::kConcat}) {
    const WindowQFormer wq(4, 3, 2, WindowConfig{4, 2}, pool, rng);
    p.clear();
    wq.collect("swqf", p);
    const Tensor wproj = random({wq.forward(audio).queries.dim(0), 4}, rng);
    check(out, std::string("window-qformer/") + to_string(pool), true,
          [&] { return project(wq.forward(audio).queries, wproj); }, with_params({audio}, p));
  }

  for (auto variant : {FusionVariant::kLinearConcat, FusionVariant::kPlainQFormer,
                       FusionVariant::kSwqfCrossAttn}) {
    FusionConfig fc;
    fc.window = {4, 2};
    fc.queries = 3;
    fc.heads = 2;
    fc.variant = variant;
    const FusionModule module(fc, 4, 6, rng);
    p.clear();
    module.collect("fusion", p);
    const Tensor fproj = random({module.fuse(audio, visual).fused.dim(0), 4}, rng);
    check(out, std::string("fusion/") + to_string(variant), true,
          [&] { return project(module.fuse(audio, visual).fused, fproj); }, with_params({audio, visual}, p));
  }

  // The last entry is the distillation student: audio-only with decoder LoRA.
  const ModelVariant variants[] = {ModelVariant::kAudioOnly, ModelVariant::kAudioSwqf,
                                   ModelVariant::kAudioVisual, ModelVariant::kAudioOnly};
  for (std::size_t k = 0; k < 4; ++k) {
    const bool lora = k == 3;
    const ModelVariant variant = variants[k];
    ModelConfig mc;
    mc.vocab = 7;
    mc.width = 8;
    mc.audio_input_width = 5;
    mc.visual_input_width = 6;
    mc.visual_width = 4;
    mc.encoder_layers = 1;
    mc.encoder_heads = 2;
    mc.decoder_layers = 1;
    mc.decoder_heads = 2;
    mc.ffn_multiplier = 2;
    mc.max_target_length = 6;
    mc.variant = variant;
    mc.fusion.window = {4, 2};
    mc.fusion.queries = 3;
    mc.fusion.heads = 2;
    mc.freeze_encoders = false;
    Model model = Model::build(mc, derive_seed(seed, "gradcheck-model"));
    if (lora) {
      model.attach_decoder_lora(2);
      for (auto q : model.parameters()) {
        if (q.name.find("lora") == std::string::npos) continue;
        for (double& v : q.tensor.mutable_data()) v = rng.normal(0.0, 0.5);
      }
    }
    ModelInput in;
    in.audio = random({7, 5}, rng);
    in.visual = random({5, 6}, rng);
    const std::vector<int> prefix{kBos, 3, 5};
    const Tensor mproj = random({prefix.size(), mc.vocab}, rng);
    std::vector<Tensor> inputs;
    for (const auto& q : trainable(model.parameters())) inputs.push_back(q);
    check(out, std::string("model/") + to_string(variant) + (lora ? "+lora" : ""), true,
          [&] { return project(model.forward(in, prefix), mproj); }, inputs);
  }
  return out;
}

std::string gradient_suite_report(const std::vector<GradCheckEntry>& entries) {
  std::string out;
  char line[160];
  for (const auto& e : entries) {
    std::snprintf(line, sizeof(line), "%-28s %-8s coords %5zu  max rel %.3e  tol %.0e  %s\n",
                  e.name.c_str(), e.composed ? "composed" : "layer", e.coordinates, e.max_rel_error,
                  e.tolerance, e.passed() ? "ok" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace avf
