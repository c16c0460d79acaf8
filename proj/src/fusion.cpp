#include "avfuse/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "avfuse/error.hpp"

namespace avf {

WindowPlan plan_windows(std::size_t frames, const WindowConfig& cfg) {
  if (cfg.window < 1 || cfg.stride < 1) {
    throw ConfigError("window length and stride must both be at least 1");
  }
  if (cfg.stride > cfg.window) {
    throw ConfigError("stride " + std::to_string(cfg.stride) + " exceeds window " +
                      std::to_string(cfg.window) + "; frames would be skipped");
  }
  if (frames < 1) throw ContractError("cannot segment an empty sequence");
  WindowPlan plan;
  plan.frames = frames;
  const std::size_t excess = frames > cfg.window ? frames - cfg.window : 0;
  const std::size_t count = (excess + cfg.stride - 1) / cfg.stride + 1;
  plan.starts.reserve(count);
  for (std::size_t u = 0; u < count; ++u) plan.starts.push_back(u * cfg.stride);
  plan.padded_frames = std::max(frames, plan.starts.back() + cfg.window);
  return plan;
}

namespace {

std::vector<std::uint8_t> window_validity(const WindowPlan& plan, std::size_t start,
                                          std::size_t window) {
  std::vector<std::uint8_t> valid(window, 0);
  for (std::size_t i = 0; i < window; ++i) valid[i] = start + i < plan.frames ? 1 : 0;
  return valid;
}

bool all_valid(std::span<const std::uint8_t> v) {
  return std::all_of(v.begin(), v.end(), [](std::uint8_t x) { return x != 0; });
}

Tensor pad_rows(const Tensor& features, std::size_t rows) {
  if (rows == features.dim(0)) return features;
  const Tensor zeros = Tensor::zeros({rows - features.dim(0), features.dim(1)});
  const Tensor parts[] = {features, zeros};
  return concat_rows(parts);
}

}  // namespace

Segmentation segment_windows(const Tensor& features, const WindowConfig& cfg) {
  if (!features.defined() || features.rank() != 2) {
    throw DimensionError("segment_windows expects a [T × d] feature sequence");
  }
  Segmentation seg;
  seg.plan = plan_windows(features.dim(0), cfg);
  const Tensor padded = pad_rows(features, seg.plan.padded_frames);
  for (std::size_t start : seg.plan.starts) {
    seg.windows.push_back(slice_rows(padded, start, cfg.window));
    seg.valid.push_back(window_validity(seg.plan, start, cfg.window));
  }
  return seg;
}

const char* to_string(PoolMode mode) { return mode == PoolMode::kMean ? "mean" : "concat"; }

const char* to_string(FusionVariant variant) {
  switch (variant) {
    case FusionVariant::kLinearConcat: return "linear-concat";
    case FusionVariant::kPlainQFormer: return "plain-qformer";
    case FusionVariant::kSwqfCrossAttn: return "swqf-crossattn";
  }
  return "?";
}

PoolMode parse_pool_mode(const std::string& s) {
  if (s == "mean") return PoolMode::kMean;
  if (s == "concat") return PoolMode::kConcat;
  throw ConfigError("unknown pool_mode '" + s + "' (expected mean|concat)");
}

FusionVariant parse_fusion_variant(const std::string& s) {
  if (s == "linear-concat") return FusionVariant::kLinearConcat;
  if (s == "plain-qformer") return FusionVariant::kPlainQFormer;
  if (s == "swqf-crossattn") return FusionVariant::kSwqfCrossAttn;
  throw ConfigError("unknown fusion variant '" + s +
                    "' (expected linear-concat|plain-qformer|swqf-crossattn)");
}

// ---- Q-Former ----------------------------------------------------------------

QFormer::QFormer(std::size_t width, std::size_t queries, std::size_t heads, Rng& rng)
    : attention_(width, heads, rng) {
  if (queries < 1) throw ConfigError("query count must be at least 1");
  std::vector<double> q(queries * width);
  for (double& v : q) v = rng.normal(0.0, 1.0);
  queries_ = Tensor::from({queries, width}, std::move(q), true);
}

Tensor QFormer::forward(const Tensor& keys_values, const AttentionMask* mask) const {
  return add(queries_, attention_.forward(queries_, keys_values, mask));
}

void QFormer::set_frozen(bool frozen) {
  queries_.set_requires_grad(!frozen);
  attention_.set_frozen(frozen);
}

void QFormer::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".queries", queries_});
  attention_.collect(prefix + ".attn", out);
}

// ---- window Q-Former -------------------------------------------------------------

WindowQFormer::WindowQFormer(std::size_t width, std::size_t queries, std::size_t heads,
                             WindowConfig window, PoolMode pool, Rng& rng)
    : core_(width, queries, heads, rng), window_(window), pool_(pool) {
  plan_windows(1, window_);  // validates the window configuration
}

QFormerOutput WindowQFormer::pool_windows(const Tensor& q, std::span<const Tensor> keys,
                                          std::span<const Tensor> values,
                                          std::span<const std::vector<std::uint8_t>> valid) const {
  const auto& attn = core_.attention();
  const std::size_t m = core_.query_count();
  QFormerOutput out;
  std::vector<Tensor> per_window;
  per_window.reserve(keys.size());
  for (std::size_t u = 0; u < keys.size(); ++u) {
    std::vector<Tensor> weights;
    const bool padded = !all_valid(valid[u]);
    AttentionMask mask;
    if (padded) mask = AttentionMask::keys(m, valid[u]);
    per_window.push_back(attn.attend(q, keys[u], values[u], padded ? &mask : nullptr, &weights));

    double padded_mass = 0.0, peak = 0.0;
    for (const auto& w : weights) {
      const auto data = w.data();
      const std::size_t cols = w.dim(1);
      for (std::size_t r = 0; r < m; ++r) {
        double row_peak = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double x = data[r * cols + c];
          row_peak = std::max(row_peak, x);
          if (!valid[u][c]) padded_mass += x;
        }
        peak += row_peak;
      }
    }
    const double rows = static_cast<double>(weights.size() * m);
    out.diagnostics.padded_mass.push_back(padded_mass / rows);
    out.diagnostics.peak_weight.push_back(peak / rows);
  }

  const Tensor& queries = core_.queries();
  if (pool_ == PoolMode::kMean) {
    // The output projection is affine, so projecting the mean equals the mean
    // of the per-window projections.
    const Tensor pooled = per_window.size() == 1 ? per_window.front()
                                                 : reduce_mean(stack(per_window), 0);
    out.queries = add(queries, attn.project_output(pooled));
  } else {
    const std::vector<Tensor> repeated(per_window.size(), queries);
    out.queries = add(concat_rows(repeated), attn.project_output(concat_rows(per_window)));
  }
  return out;
}

QFormerOutput WindowQFormer::forward(const Tensor& audio) const {
  if (!audio.defined() || audio.rank() != 2) {
    throw DimensionError("window Q-Former expects a [T × d] audio sequence");
  }
  const WindowPlan plan = plan_windows(audio.dim(0), window_);
  const Tensor padded = pad_rows(audio, plan.padded_frames);
  const auto& attn = core_.attention();
  const Tensor q = attn.project_queries(core_.queries());
  const Tensor k = attn.project_keys(padded);
  const Tensor v = attn.project_values(padded);
  std::vector<Tensor> keys, values;
  std::vector<std::vector<std::uint8_t>> valid;
  for (std::size_t start : plan.starts) {
    keys.push_back(slice_rows(k, start, window_.window));
    values.push_back(slice_rows(v, start, window_.window));
    valid.push_back(window_validity(plan, start, window_.window));
  }
  return pool_windows(q, keys, values, valid);
}

QFormerOutput WindowQFormer::forward(const Segmentation& segments) const {
  if (segments.windows.empty()) throw ContractError("window Q-Former: no windows");
  if (segments.windows.size() != segments.valid.size()) {
    throw ContractError("window Q-Former: validity masks do not match windows");
  }
  const auto& attn = core_.attention();
  const Tensor q = attn.project_queries(core_.queries());
  std::vector<Tensor> keys, values;
  for (const auto& w : segments.windows) {
    keys.push_back(attn.project_keys(w));
    values.push_back(attn.project_values(w));
  }
  return pool_windows(q, keys, values, segments.valid);
}

QFormerOutput window_qformer(const WindowQFormer& module, const Segmentation& segments) {
  return module.forward(segments);
}

// ---- cross-attention fusion ------------------------------------------------------

FusionOutput cross_attention_fuse(const MultiHeadAttention& attn, const Tensor& queries,
                                  const Tensor& visual,
                                  std::span<const std::uint8_t> visual_valid) {
  if (!visual.defined()) throw ContractError("cross-attention fusion: empty visual sequence");
  if (!visual_valid.empty() && visual_valid.size() != visual.dim(0)) {
    throw DimensionError("cross-attention fusion: visual mask length mismatch");
  }
  FusionOutput out;
  AttentionMask mask;
  const bool masked = !visual_valid.empty() && !all_valid(visual_valid);
  if (masked) mask = AttentionMask::keys(queries.dim(0), visual_valid);
  const Tensor heads =
      attn.attend(attn.project_queries(queries), attn.project_keys(visual),
                  attn.project_values(visual), masked ? &mask : nullptr, &out.cross_weights);
  out.fused = add(queries, attn.project_output(heads));
  return out;
}

Tensor visual_project(const LinearLayer& proj, const Tensor& visual) {
  return proj.forward(visual);
}

// ---- variants ----------------------------------------------------------------------

FusionModule::FusionModule(const FusionConfig& cfg, std::size_t width, std::size_t visual_width,
                           Rng& rng)
    : cfg_(cfg), visual_proj_(visual_width, width, rng) {
  switch (cfg.variant) {
    case FusionVariant::kSwqfCrossAttn:
      swqf_.emplace(width, cfg.queries, cfg.heads, cfg.window, cfg.pool, rng);
      cross_.emplace(width, cfg.heads, rng);
      break;
    case FusionVariant::kLinearConcat:
      concat_linear_.emplace(width, width, rng);
      break;
    case FusionVariant::kPlainQFormer:
      plain_.emplace(width, cfg.queries, cfg.heads, rng);
      break;
  }
}

FusionOutput FusionModule::fuse(const Tensor& audio, const Tensor& visual,
                                std::span<const std::uint8_t> visual_valid) const {
  const Tensor projected = visual_project(visual_proj_, visual);
  switch (cfg_.variant) {
    case FusionVariant::kSwqfCrossAttn: {
      QFormerOutput q = swqf_->forward(audio);
      FusionOutput out = cross_attention_fuse(*cross_, q.queries, projected, visual_valid);
      out.windows = std::move(q.diagnostics);
      return out;
    }
    case FusionVariant::kLinearConcat: {
      const Tensor parts[] = {audio, projected};
      FusionOutput out;
      out.fused = concat_linear_->forward(concat_rows(parts));
      if (!visual_valid.empty() && !all_valid(visual_valid)) {
        out.memory_valid.assign(audio.dim(0), 1);
        out.memory_valid.insert(out.memory_valid.end(), visual_valid.begin(), visual_valid.end());
      }
      return out;
    }
    case FusionVariant::kPlainQFormer: {
      const Tensor parts[] = {audio, projected};
      const Tensor joined = concat_rows(parts);
      FusionOutput out;
      if (!visual_valid.empty() && !all_valid(visual_valid)) {
        std::vector<std::uint8_t> valid(audio.dim(0), 1);
        valid.insert(valid.end(), visual_valid.begin(), visual_valid.end());
        const AttentionMask mask = AttentionMask::keys(plain_->query_count(), valid);
        out.fused = plain_->forward(joined, &mask);
      } else {
        out.fused = plain_->forward(joined);
      }
      return out;
    }
  }
  throw ConfigError("unhandled fusion variant");
}

void FusionModule::collect(const std::string& prefix, ParameterList& out) const {
  visual_proj_.collect(prefix + ".visual_proj", out);
  if (swqf_) swqf_->collect(prefix + ".window_qformer", out);
  if (cross_) cross_->collect(prefix + ".cross_attn", out);
  if (concat_linear_) concat_linear_->collect(prefix + ".concat_linear", out);
  if (plain_) plain_->collect(prefix + ".qformer", out);
}

FusionOutput fuse_variant(const FusionModule& module, const Tensor& audio, const Tensor& visual) {
  return module.fuse(audio, visual);
}

}  // namespace avf
