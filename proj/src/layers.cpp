#include "avfuse/layers.hpp"

#include <cmath>

#include "avfuse/error.hpp"

namespace avf {

std::vector<Tensor> trainable(const ParameterList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) {
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  }
  return out;
}

// ---- linear ----------------------------------------------------------------

LinearLayer::LinearLayer(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  if (in == 0 || out == 0) throw ConfigError("linear layer extents must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  weight_ = Tensor::from({out, in}, std::move(w), true);
  if (with_bias) {
    std::vector<double> b(out);
    for (double& v : b) v = rng.uniform(-bound, bound);
    bias_ = Tensor::from({out}, std::move(b), true);
  }
}

LinearLayer LinearLayer::from(Tensor weight, Tensor bias) {
  if (weight.rank() != 2) throw DimensionError("linear weight must be [out × in]");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    throw DimensionError("linear bias must be [out]");
  }
  LinearLayer layer;
  layer.weight_ = std::move(weight);
  layer.bias_ = std::move(bias);
  return layer;
}

Tensor LinearLayer::forward(const Tensor& x) const {
  if (x.shape().back() != in_features()) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " does not end in " +
                         std::to_string(in_features()));
  }
  Tensor y = matmul_nt(x, weight_);
  if (bias_.defined()) y = add_bias(y, bias_);
  if (lora_) {
    y = add(y, scale(matmul_nt(matmul_nt(x, lora_->down), lora_->up), lora_->scaling));
  }
  return y;
}

void LinearLayer::set_frozen(bool frozen) {
  frozen_ = frozen;
  weight_.set_requires_grad(!frozen);
  if (bias_.defined()) bias_.set_requires_grad(!frozen);
}

void LinearLayer::attach_lora(std::size_t rank, Rng& rng, double scaling) {
  if (rank == 0) throw ConfigError("LoRA rank must be at least 1");
  if (rank > std::min(in_features(), out_features())) {
    throw ConfigError("LoRA rank exceeds min(in, out)");
  }
  set_frozen(true);
  LoraAdapter a;
  a.rank = rank;
  a.scaling = scaling > 0.0 ? scaling : 2.0 / static_cast<double>(rank);
  std::vector<double> down(rank * in_features());
  for (double& v : down) v = rng.normal(0.0, 0.02);
  a.down = Tensor::from({rank, in_features()}, std::move(down), true);
  a.up = Tensor::zeros({out_features(), rank}, true);
  lora_ = std::move(a);
}

void LinearLayer::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight_});
  if (bias_.defined()) out.push_back({prefix + ".bias", bias_});
  if (lora_) {
    out.push_back({prefix + ".lora_down", lora_->down});
    out.push_back({prefix + ".lora_up", lora_->up});
  }
}

Tensor linear_forward(const LinearLayer& layer, const Tensor& x) { return layer.forward(x); }

Tensor lora_forward(const LinearLayer& layer, const Tensor& x) {
  if (!layer.lora()) throw ContractError("lora_forward: no adapter attached");
  if (!layer.frozen()) throw ContractError("lora_forward: base layer must be frozen");
  return layer.forward(x);
}

// ---- layer norm / embedding --------------------------------------------------

LayerNorm::LayerNorm(std::size_t width)
    : gain_(Tensor::full({width}, 1.0, true)), offset_(Tensor::zeros({width}, true)) {}

void LayerNorm::set_frozen(bool frozen) {
  gain_.set_requires_grad(!frozen);
  offset_.set_requires_grad(!frozen);
}

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".gain", gain_});
  out.push_back({prefix + ".offset", offset_});
}

Embedding::Embedding(std::size_t vocab, std::size_t width, Rng& rng) {
  std::vector<double> t(vocab * width);
  for (double& v : t) v = rng.normal(0.0, 0.02);
  table_ = Tensor::from({vocab, width}, std::move(t), true);
}

void Embedding::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".table", table_});
}

// ---- masks -------------------------------------------------------------------

AttentionMask AttentionMask::all(std::size_t rows, std::size_t cols) {
  return {rows, cols, std::vector<std::uint8_t>(rows * cols, 1)};
}

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c <= r; ++c) m.allowed[r * n + c] = 1;
  }
  return m;
}

AttentionMask AttentionMask::keys(std::size_t rows, std::span<const std::uint8_t> valid) {
  AttentionMask m{rows, valid.size(), {}};
  m.allowed.reserve(rows * valid.size());
  for (std::size_t r = 0; r < rows; ++r) m.allowed.insert(m.allowed.end(), valid.begin(), valid.end());
  return m;
}

// ---- attention -----------------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng)
    : width_(width), heads_(heads) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  query_ = LinearLayer(width, width, rng);
  key_ = LinearLayer(width, width, rng, /*with_bias=*/false);
  value_ = LinearLayer(width, width, rng);
  out_ = LinearLayer(width, width, rng);
}

Tensor MultiHeadAttention::attend(const Tensor& q, const Tensor& k, const Tensor& v,
                                  const AttentionMask* mask, std::vector<Tensor>* weights) const {
  const std::size_t lq = q.dim(0), lk = k.dim(0);
  if (v.dim(0) != lk) throw DimensionError("attention: key and value lengths differ");
  Tensor additive;
  if (mask) {
    if (mask->rows != lq || mask->cols != lk) {
      throw DimensionError("attention: mask is " + std::to_string(mask->rows) + "x" +
                           std::to_string(mask->cols) + ", scores are " + std::to_string(lq) +
                           "x" + std::to_string(lk));
    }
    std::vector<double> bias(lq * lk, 0.0);
    for (std::size_t r = 0; r < lq; ++r) {
      bool any = false;
      for (std::size_t c = 0; c < lk; ++c) {
        if (mask->at(r, c)) {
          any = true;
        } else {
          bias[r * lk + c] = kMaskedScore;
        }
      }
      if (!any) {
        throw ContractError("attention: query row " + std::to_string(r) + " has no allowed key");
      }
    }
    additive = Tensor::from({lq, lk}, std::move(bias));
  }
  const std::size_t dh = head_width();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outputs;
  outputs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const Tensor qh = heads_ == 1 ? q : slice_cols(q, h * dh, dh);
    const Tensor kh = heads_ == 1 ? k : slice_cols(k, h * dh, dh);
    const Tensor vh = heads_ == 1 ? v : slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    if (additive.defined()) scores = add(scores, additive);
    Tensor w = softmax(scores, 1);
    if (weights) weights->push_back(w);
    outputs.push_back(matmul(w, vh));
  }
  return heads_ == 1 ? outputs.front() : concat_cols(outputs);
}

MultiHeadAttention::Result MultiHeadAttention::forward_with_weights(
    const Tensor& q_in, const Tensor& kv_in, const AttentionMask* mask) const {
  if (q_in.rank() != 2 || kv_in.rank() != 2) throw DimensionError("attention inputs must be 2-D");
  if (kv_in.dim(0) == 0) throw ContractError("attention: empty key sequence");
  Result r;
  const Tensor heads = attend(project_queries(q_in), project_keys(kv_in), project_values(kv_in),
                              mask, &r.weights);
  r.output = project_output(heads);
  return r;
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& kv_in,
                                   const AttentionMask* mask) const {
  if (q_in.rank() != 2 || kv_in.rank() != 2) throw DimensionError("attention inputs must be 2-D");
  return project_output(
      attend(project_queries(q_in), project_keys(kv_in), project_values(kv_in), mask));
}

void MultiHeadAttention::set_frozen(bool frozen) {
  query_.set_frozen(frozen);
  key_.set_frozen(frozen);
  value_.set_frozen(frozen);
  out_.set_frozen(frozen);
}

void MultiHeadAttention::collect(const std::string& prefix, ParameterList& out) const {
  query_.collect(prefix + ".query", out);
  key_.collect(prefix + ".key", out);
  value_.collect(prefix + ".value", out);
  out_.collect(prefix + ".out", out);
}

Tensor mha_forward(const MultiHeadAttention& attn, const Tensor& q_in, const Tensor& kv_in,
                   const AttentionMask* mask) {
  return attn.forward(q_in, kv_in, mask);
}

// ---- feed-forward ----------------------------------------------------------------

FeedForward::FeedForward(std::size_t width, std::size_t hidden, Rng& rng)
    : up_(width, hidden, rng), down_(hidden, width, rng) {}

void FeedForward::set_frozen(bool frozen) {
  up_.set_frozen(frozen);
  down_.set_frozen(frozen);
}

void FeedForward::collect(const std::string& prefix, ParameterList& out) const {
  up_.collect(prefix + ".up", out);
  down_.collect(prefix + ".down", out);
}

}  // namespace avf
