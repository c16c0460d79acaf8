#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avfuse/layers.hpp"
#include "avfuse/rng.hpp"
#include "avfuse/tensor.hpp"

namespace avf {

struct WindowConfig {
  std::size_t window = 64;  // frames per window
  std::size_t stride = 32;  // frames between window starts
};

// Window layout over a sequence of `frames` frames. The sequence is padded to
// `padded_frames` so that every window is complete.
struct WindowPlan {
  std::size_t frames = 0;
  std::size_t padded_frames = 0;
  std::vector<std::size_t> starts;  // 0-based first frame of each window

  std::size_t count() const { return starts.size(); }
};

// N = ceil(max(T - w, 0) / stride) + 1.
WindowPlan plan_windows(std::size_t frames, const WindowConfig& cfg);

struct Segmentation {
  WindowPlan plan;
  std::vector<Tensor> windows;                   // each [w × d], zero-padded
  std::vector<std::vector<std::uint8_t>> valid;  // per window, 1 for real frames
};

Segmentation segment_windows(const Tensor& features, const WindowConfig& cfg);

enum class PoolMode { kMean, kConcat };
enum class FusionVariant { kLinearConcat, kPlainQFormer, kSwqfCrossAttn };

const char* to_string(PoolMode mode);
const char* to_string(FusionVariant variant);
PoolMode parse_pool_mode(const std::string& s);
FusionVariant parse_fusion_variant(const std::string& s);

struct FusionConfig {
  WindowConfig window;
  std::size_t queries = 16;
  std::size_t heads = 4;
  FusionVariant variant = FusionVariant::kSwqfCrossAttn;
  PoolMode pool = PoolMode::kMean;
};

// Per-window attention summaries, averaged over heads and queries.
struct WindowDiagnostics {
  std::vector<double> padded_mass;  // attention mass landing on padded frames
  std::vector<double> peak_weight;  // mean of the per-row maximum weight
};

// Learnable queries attending to one key/value sequence; the output keeps the
// queries as a residual: Q + Attention(Q, H, H).
class QFormer {
 public:
  QFormer() = default;
  QFormer(std::size_t width, std::size_t queries, std::size_t heads, Rng& rng);

  Tensor forward(const Tensor& keys_values, const AttentionMask* mask = nullptr) const;

  const Tensor& queries() const { return queries_; }
  Tensor& queries() { return queries_; }
  MultiHeadAttention& attention() { return attention_; }
  const MultiHeadAttention& attention() const { return attention_; }
  std::size_t query_count() const { return queries_.dim(0); }

  void set_frozen(bool frozen);
  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  Tensor queries_;  // [M × d]
  MultiHeadAttention attention_;
};

struct QFormerOutput {
  Tensor queries;  // [M × d], or [N·M × d] with PoolMode::kConcat
  WindowDiagnostics diagnostics;
};

// Q-Former applied per temporal window; per-window outputs are pooled and the
// learnable queries are added back.
class WindowQFormer {
 public:
  WindowQFormer() = default;
  WindowQFormer(std::size_t width, std::size_t queries, std::size_t heads, WindowConfig window,
                PoolMode pool, Rng& rng);

  // Projects keys/values once over the padded sequence and slices per window.
  QFormerOutput forward(const Tensor& audio) const;
  // Same computation from an explicit window list (any order).
  QFormerOutput forward(const Segmentation& segments) const;

  const WindowConfig& window() const { return window_; }
  PoolMode pool() const { return pool_; }
  QFormer& core() { return core_; }
  const QFormer& core() const { return core_; }

  void set_frozen(bool frozen) { core_.set_frozen(frozen); }
  void collect(const std::string& prefix, ParameterList& out) const {
    core_.collect(prefix, out);
  }

 private:
  QFormerOutput pool_windows(const Tensor& q, std::span<const Tensor> keys,
                             std::span<const Tensor> values,
                             std::span<const std::vector<std::uint8_t>> valid) const;

  QFormer core_;
  WindowConfig window_;
  PoolMode pool_ = PoolMode::kMean;
};

QFormerOutput window_qformer(const WindowQFormer& module, const Segmentation& segments);

struct FusionOutput {
  Tensor fused;                       // decoder-facing sequence
  WindowDiagnostics windows;          // from the window Q-Former, when present
  std::vector<Tensor> cross_weights;  // per head, from the fusion attention
  std::vector<std::uint8_t> memory_valid;  // empty when every output row is real
};

// queries + MHA(queries, visual, visual); visual_valid masks padded tokens.
FusionOutput cross_attention_fuse(const MultiHeadAttention& attn, const Tensor& queries,
                                  const Tensor& visual,
                                  std::span<const std::uint8_t> visual_valid = {});

Tensor visual_project(const LinearLayer& proj, const Tensor& visual);

class FusionModule {
 public:
  FusionModule() = default;
  FusionModule(const FusionConfig& cfg, std::size_t width, std::size_t visual_width, Rng& rng);

  // audio [T × d], visual [Lv × d_v]. Output length: T + Lv for linear-concat,
  // M otherwise (N·M with concat pooling).
  FusionOutput fuse(const Tensor& audio, const Tensor& visual,
                    std::span<const std::uint8_t> visual_valid = {}) const;

  const FusionConfig& config() const { return cfg_; }
  LinearLayer& visual_projection() { return visual_proj_; }
  std::optional<WindowQFormer>& window_qformer() { return swqf_; }
  std::optional<MultiHeadAttention>& cross_attention() { return cross_; }
  std::optional<LinearLayer>& concat_linear() { return concat_linear_; }
  std::optional<QFormer>& plain_qformer() { return plain_; }

  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  FusionConfig cfg_;
  LinearLayer visual_proj_;
  std::optional<WindowQFormer> swqf_;
  std::optional<MultiHeadAttention> cross_;
  std::optional<LinearLayer> concat_linear_;
  std::optional<QFormer> plain_;
};

FusionOutput fuse_variant(const FusionModule& module, const Tensor& audio, const Tensor& visual);

}  // namespace avf
