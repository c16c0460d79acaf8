#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avfuse/rng.hpp"
#include "avfuse/tensor.hpp"

namespace avf {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedParameter>;

// Tensors of a parameter list that the optimizer may update.
std::vector<Tensor> trainable(const ParameterList& params);

// Low-rank additive correction s·B·A on top of a frozen linear map.
struct LoraAdapter {
  std::size_t rank = 0;
  double scaling = 0.0;
  Tensor down;  // A: [rank × in]
  Tensor up;    // B: [out × rank]
};

class LinearLayer {
 public:
  LinearLayer() = default;
  // Weights and bias uniform in ±1/√in.
  LinearLayer(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  // bias may be undefined.
  static LinearLayer from(Tensor weight, Tensor bias);

  Tensor forward(const Tensor& x) const;

  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

  // Freezes the base map and adds a trainable adapter (A ~ N(0, 0.02²), B = 0).
  // scaling <= 0 selects the default 2/rank.
  void attach_lora(std::size_t rank, Rng& rng, double scaling = 0.0);
  const std::optional<LoraAdapter>& lora() const { return lora_; }
  std::optional<LoraAdapter>& lora() { return lora_; }

  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  Tensor weight_;  // [out × in]
  Tensor bias_;    // [out]
  bool frozen_ = false;
  std::optional<LoraAdapter> lora_;
};

// y = x·Wᵀ + bias, plus the adapter path when one is attached.
Tensor linear_forward(const LinearLayer& layer, const Tensor& x);
// Requires an attached adapter: base(x) + s·(x·Aᵀ)·Bᵀ.
Tensor lora_forward(const LinearLayer& layer, const Tensor& x);

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gain_, offset_, 1e-5); }
  void set_frozen(bool frozen);
  void collect(const std::string& prefix, ParameterList& out) const;
  Tensor& gain() { return gain_; }
  Tensor& offset() { return offset_; }

 private:
  Tensor gain_;
  Tensor offset_;
};

class Embedding {
 public:
  Embedding() = default;
  // Rows drawn from N(0, 0.02²).
  Embedding(std::size_t vocab, std::size_t width, Rng& rng);
  Tensor forward(std::span<const int> ids) const { return embedding(table_, ids); }
  void set_frozen(bool frozen) { table_.set_requires_grad(!frozen); }
  void collect(const std::string& prefix, ParameterList& out) const;
  Tensor& table() { return table_; }
  const Tensor& table() const { return table_; }

 private:
  Tensor table_;
};

// Boolean allowed/disallowed matrix, converted to an additive -1e9 term.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask all(std::size_t rows, std::size_t cols);
  static AttentionMask causal(std::size_t n);
  // Every query row may see exactly the keys flagged valid.
  static AttentionMask keys(std::size_t rows, std::span<const std::uint8_t> valid);

  bool at(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

inline constexpr double kMaskedScore = -1e9;

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  // Key projection carries no bias: a per-row key offset cancels in softmax.
  MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng);

  Tensor forward(const Tensor& q_in, const Tensor& kv_in,
                 const AttentionMask* mask = nullptr) const;

  struct Result {
    Tensor output;                 // [Lq × d]
    std::vector<Tensor> weights;   // per head [Lq × Lk]
  };
  Result forward_with_weights(const Tensor& q_in, const Tensor& kv_in,
                              const AttentionMask* mask = nullptr) const;

  // Pieces used by callers that reuse projections across several key sets.
  Tensor project_queries(const Tensor& q_in) const { return query_.forward(q_in); }
  Tensor project_keys(const Tensor& kv_in) const { return key_.forward(kv_in); }
  Tensor project_values(const Tensor& kv_in) const { return value_.forward(kv_in); }
  // Head-concatenated attention output before the output projection.
  Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask* mask,
                std::vector<Tensor>* weights = nullptr) const;
  Tensor project_output(const Tensor& heads) const { return out_.forward(heads); }

  std::size_t width() const { return width_; }
  std::size_t heads() const { return heads_; }
  std::size_t head_width() const { return width_ / heads_; }

  LinearLayer& query() { return query_; }
  LinearLayer& key() { return key_; }
  LinearLayer& value() { return value_; }
  LinearLayer& out() { return out_; }
  const LinearLayer& query() const { return query_; }
  const LinearLayer& key() const { return key_; }
  const LinearLayer& value() const { return value_; }
  const LinearLayer& out() const { return out_; }

  void set_frozen(bool frozen);
  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  std::size_t width_ = 0;
  std::size_t heads_ = 1;
  LinearLayer query_, key_, value_, out_;
};

Tensor mha_forward(const MultiHeadAttention& attn, const Tensor& q_in, const Tensor& kv_in,
                   const AttentionMask* mask = nullptr);

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t width, std::size_t hidden, Rng& rng);
  Tensor forward(const Tensor& x) const { return down_.forward(gelu(up_.forward(x))); }
  void set_frozen(bool frozen);
  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  LinearLayer up_, down_;
};

}  // namespace avf
