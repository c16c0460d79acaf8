#include "avfuse/model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

#include "avfuse/error.hpp"
#include "avfuse/rng.hpp"

namespace avf {

using nlohmann::json;

const char* to_string(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::kAudioOnly: return "audio-only";
    case ModelVariant::kAudioSwqf: return "audio-swqf";
    case ModelVariant::kAudioVisual: return "av";
  }
  return "?";
}

ModelVariant parse_model_variant(const std::string& s) {
  if (s == "audio-only") return ModelVariant::kAudioOnly;
  if (s == "audio-swqf") return ModelVariant::kAudioSwqf;
  if (s == "av") return ModelVariant::kAudioVisual;
  throw ConfigError("unknown model variant '" + s + "' (expected audio-only|audio-swqf|av)");
}

void ModelConfig::validate() const {
  if (vocab <= static_cast<std::size_t>(kFirstContentToken)) {
    throw ConfigError("vocabulary must hold the reserved tokens and at least one content token");
  }
  if (width == 0 || audio_input_width == 0 || visual_input_width == 0 || visual_width == 0) {
    throw ConfigError("model widths must be positive");
  }
  if (width % decoder_heads != 0 || width % encoder_heads != 0 || width % fusion.heads != 0) {
    throw ConfigError("model width " + std::to_string(width) + " is not divisible by head count");
  }
  if (visual_width % encoder_heads != 0) {
    throw ConfigError("visual width " + std::to_string(visual_width) +
                      " is not divisible by encoder heads");
  }
  if (decoder_layers == 0 || ffn_multiplier == 0 || max_target_length == 0) {
    throw ConfigError("decoder depth, ffn multiplier and max target length must be positive");
  }
  if (fusion.queries == 0) throw ConfigError("fusion query count must be positive");
  plan_windows(1, fusion.window);
  if (lora_rank > width) throw ConfigError("LoRA rank exceeds model width");
}

std::string model_config_to_json(const ModelConfig& c) {
  json j = {
      {"vocab", c.vocab},
      {"width", c.width},
      {"audio_input_width", c.audio_input_width},
      {"visual_input_width", c.visual_input_width},
      {"visual_width", c.visual_width},
      {"encoder_layers", c.encoder_layers},
      {"encoder_heads", c.encoder_heads},
      {"decoder_layers", c.decoder_layers},
      {"decoder_heads", c.decoder_heads},
      {"ffn_multiplier", c.ffn_multiplier},
      {"max_target_length", c.max_target_length},
      {"variant", to_string(c.variant)},
      {"freeze_encoders", c.freeze_encoders},
      {"lora_rank", c.lora_rank},
      {"fusion",
       {{"window", c.fusion.window.window},
        {"stride", c.fusion.window.stride},
        {"queries", c.fusion.queries},
        {"heads", c.fusion.heads},
        {"variant", to_string(c.fusion.variant)},
        {"pool_mode", to_string(c.fusion.pool)}}},
  };
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.vocab = j.at("vocab");
    c.width = j.at("width");
    c.audio_input_width = j.at("audio_input_width");
    c.visual_input_width = j.at("visual_input_width");
    c.visual_width = j.at("visual_width");
    c.encoder_layers = j.at("encoder_layers");
    c.encoder_heads = j.at("encoder_heads");
    c.decoder_layers = j.at("decoder_layers");
    c.decoder_heads = j.at("decoder_heads");
    c.ffn_multiplier = j.at("ffn_multiplier");
    c.max_target_length = j.at("max_target_length");
    c.variant = parse_model_variant(j.at("variant"));
    c.freeze_encoders = j.at("freeze_encoders");
    c.lora_rank = j.at("lora_rank");
    const json& f = j.at("fusion");
    c.fusion.window.window = f.at("window");
    c.fusion.window.stride = f.at("stride");
    c.fusion.queries = f.at("queries");
    c.fusion.heads = f.at("heads");
    c.fusion.variant = parse_fusion_variant(f.at("variant"));
    c.fusion.pool = parse_pool_mode(f.at("pool_mode"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

// ---- encoder -------------------------------------------------------------------

namespace {

Tensor sinusoid_positions(std::size_t length, std::size_t width) {
  std::vector<double> pe(length * width);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) /
                                                static_cast<double>(width));
      pe[t * width + i] = i % 2 == 0 ? std::sin(t * rate) : std::cos(t * rate);
    }
  }
  return Tensor::from({length, width}, std::move(pe));
}

bool all_valid(std::span<const std::uint8_t> v) {
  for (auto x : v) {
    if (!x) return false;
  }
  return true;
}

}  // namespace

ToyEncoder::ToyEncoder(std::size_t input_width, std::size_t width, std::size_t layers,
                       std::size_t heads, std::size_t ffn_multiplier, Rng& rng)
    : input_(input_width, width, rng), final_(width) {
  for (std::size_t l = 0; l < layers; ++l) {
    blocks_.push_back(Block{LayerNorm(width), MultiHeadAttention(width, heads, rng),
                            LayerNorm(width), FeedForward(width, width * ffn_multiplier, rng)});
  }
}

Tensor ToyEncoder::forward(const Tensor& x, std::span<const std::uint8_t> valid) const {
  if (!x.defined() || x.rank() != 2) throw DimensionError("encoder expects [T × features]");
  if (!valid.empty() && valid.size() != x.dim(0)) {
    throw DimensionError("encoder validity mask length mismatch");
  }
  Tensor h = input_.forward(x);
  h = add(h, sinusoid_positions(h.dim(0), h.dim(1)));
  AttentionMask mask;
  const bool masked = !valid.empty() && !all_valid(valid);
  if (masked) mask = AttentionMask::keys(x.dim(0), valid);
  for (const auto& b : blocks_) {
    const Tensor n = b.norm_attn.forward(h);
    h = add(h, b.attn.forward(n, n, masked ? &mask : nullptr));
    h = add(h, b.ffn.forward(b.norm_ffn.forward(h)));
  }
  return final_.forward(h);
}

void ToyEncoder::set_frozen(bool frozen) {
  input_.set_frozen(frozen);
  for (auto& b : blocks_) {
    b.norm_attn.set_frozen(frozen);
    b.attn.set_frozen(frozen);
    b.norm_ffn.set_frozen(frozen);
    b.ffn.set_frozen(frozen);
  }
  final_.set_frozen(frozen);
}

void ToyEncoder::collect(const std::string& prefix, ParameterList& out) const {
  input_.collect(prefix + ".input", out);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::string p = prefix + ".block" + std::to_string(l);
    blocks_[l].norm_attn.collect(p + ".norm_attn", out);
    blocks_[l].attn.collect(p + ".attn", out);
    blocks_[l].norm_ffn.collect(p + ".norm_ffn", out);
    blocks_[l].ffn.collect(p + ".ffn", out);
  }
  final_.collect(prefix + ".final_norm", out);
}

// ---- decoder -------------------------------------------------------------------

Decoder::Decoder(std::size_t vocab, std::size_t width, std::size_t layers, std::size_t heads,
                 std::size_t ffn_multiplier, std::size_t max_positions, Rng& rng)
    : tokens_(vocab, width, rng), final_(width) {
  std::vector<double> pos(max_positions * width);
  for (double& v : pos) v = rng.normal(0.0, 0.02);
  positions_ = Tensor::from({max_positions, width}, std::move(pos), true);
  for (std::size_t l = 0; l < layers; ++l) {
    blocks_.push_back(Block{LayerNorm(width), MultiHeadAttention(width, heads, rng),
                            LayerNorm(width), MultiHeadAttention(width, heads, rng),
                            LayerNorm(width), FeedForward(width, width * ffn_multiplier, rng)});
  }
  head_ = LinearLayer(width, vocab, rng);
}

Tensor Decoder::forward(std::span<const int> tokens, const Tensor& memory,
                        std::span<const std::uint8_t> memory_valid) const {
  if (tokens.empty()) throw ContractError("decoder: empty token prefix");
  if (tokens.size() > max_positions()) {
    throw ContractError("decoder: prefix of " + std::to_string(tokens.size()) +
                        " exceeds " + std::to_string(max_positions()) + " positions");
  }
  Tensor h = add(tokens_.forward(tokens), slice_rows(positions_, 0, tokens.size()));
  const AttentionMask causal = AttentionMask::causal(tokens.size());
  AttentionMask memory_mask;
  const bool masked = !memory_valid.empty() && !all_valid(memory_valid);
  if (masked) memory_mask = AttentionMask::keys(tokens.size(), memory_valid);
  for (const auto& b : blocks_) {
    const Tensor n = b.norm_self.forward(h);
    h = add(h, b.self_attn.forward(n, n, &causal));
    h = add(h, b.cross_attn.forward(b.norm_cross.forward(h), memory,
                                    masked ? &memory_mask : nullptr));
    h = add(h, b.ffn.forward(b.norm_ffn.forward(h)));
  }
  return head_.forward(final_.forward(h));
}

void Decoder::set_frozen(bool frozen) {
  tokens_.set_frozen(frozen);
  positions_.set_requires_grad(!frozen);
  for (auto& b : blocks_) {
    b.norm_self.set_frozen(frozen);
    b.self_attn.set_frozen(frozen);
    b.norm_cross.set_frozen(frozen);
    b.cross_attn.set_frozen(frozen);
    b.norm_ffn.set_frozen(frozen);
    b.ffn.set_frozen(frozen);
  }
  final_.set_frozen(frozen);
  head_.set_frozen(frozen);
}

void Decoder::attach_lora(std::size_t rank, Rng& rng) {
  set_frozen(true);
  for (auto& b : blocks_) {
    b.self_attn.query().attach_lora(rank, rng);
    b.self_attn.value().attach_lora(rank, rng);
    b.cross_attn.query().attach_lora(rank, rng);
    b.cross_attn.value().attach_lora(rank, rng);
  }
}

void Decoder::collect(const std::string& prefix, ParameterList& out) const {
  tokens_.collect(prefix + ".tokens", out);
  out.push_back({prefix + ".positions", positions_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::string p = prefix + ".block" + std::to_string(l);
    blocks_[l].norm_self.collect(p + ".norm_self", out);
    blocks_[l].self_attn.collect(p + ".self_attn", out);
    blocks_[l].norm_cross.collect(p + ".norm_cross", out);
    blocks_[l].cross_attn.collect(p + ".cross_attn", out);
    blocks_[l].norm_ffn.collect(p + ".norm_ffn", out);
    blocks_[l].ffn.collect(p + ".ffn", out);
  }
  final_.collect(prefix + ".final_norm", out);
  head_.collect(prefix + ".head", out);
}

// ---- model -----------------------------------------------------------------------

Model Model::build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  m.seed_ = seed;
  Rng audio_rng(derive_seed(seed, "audio-encoder"));
  m.audio_encoder_ = ToyEncoder(cfg.audio_input_width, cfg.width, cfg.encoder_layers,
                                cfg.encoder_heads, cfg.ffn_multiplier, audio_rng);
  m.audio_encoder_.set_frozen(cfg.freeze_encoders);
  if (cfg.variant == ModelVariant::kAudioVisual) {
    Rng visual_rng(derive_seed(seed, "visual-encoder"));
    m.visual_encoder_.emplace(cfg.visual_input_width, cfg.visual_width, cfg.encoder_layers,
                              cfg.encoder_heads, cfg.ffn_multiplier, visual_rng);
    m.visual_encoder_->set_frozen(cfg.freeze_encoders);
    Rng fusion_rng(derive_seed(seed, "fusion"));
    m.fusion_.emplace(cfg.fusion, cfg.width, cfg.visual_width, fusion_rng);
  } else if (cfg.variant == ModelVariant::kAudioSwqf) {
    Rng fusion_rng(derive_seed(seed, "fusion"));
    m.audio_qformer_.emplace(cfg.width, cfg.fusion.queries, cfg.fusion.heads, cfg.fusion.window,
                             cfg.fusion.pool, fusion_rng);
  }
  Rng decoder_rng(derive_seed(seed, "decoder"));
  // BOS plus up to max_target_length tokens.
  m.decoder_ = Decoder(cfg.vocab, cfg.width, cfg.decoder_layers, cfg.decoder_heads,
                       cfg.ffn_multiplier, cfg.max_target_length + 1, decoder_rng);
  if (cfg.lora_rank > 0) {
    Rng lora_rng(derive_seed(seed, "decoder-lora"));
    m.decoder_.attach_lora(cfg.lora_rank, lora_rng);
  }
  return m;
}

EncodedInput Model::encode(const ModelInput& input) const {
  if (!input.audio.defined()) throw ContractError("model input has no audio");
  EncodedInput enc;
  std::optional<NoGradGuard> guard;
  if (cfg_.freeze_encoders) guard.emplace();
  enc.audio = audio_encoder_.forward(input.audio);
  if (visual_encoder_) {
    if (!input.visual.defined()) throw ContractError("audio-visual model requires visual input");
    enc.visual = visual_encoder_->forward(input.visual, input.visual_valid);
    enc.visual_valid = input.visual_valid;
  }
  return enc;
}

Memory Model::memory(const EncodedInput& encoded) const {
  Memory mem;
  switch (cfg_.variant) {
    case ModelVariant::kAudioOnly:
      mem.states = encoded.audio;
      break;
    case ModelVariant::kAudioSwqf:
      mem.states = audio_qformer_->forward(encoded.audio).queries;
      break;
    case ModelVariant::kAudioVisual: {
      FusionOutput out = fusion_->fuse(encoded.audio, encoded.visual, encoded.visual_valid);
      mem.states = std::move(out.fused);
      mem.valid = std::move(out.memory_valid);
      break;
    }
  }
  return mem;
}

Tensor Model::logits(const Memory& memory, std::span<const int> decoder_input) const {
  return decoder_.forward(decoder_input, memory.states, memory.valid);
}

Tensor Model::forward(const ModelInput& input, std::span<const int> decoder_input) const {
  if (decoder_input.empty() || decoder_input.front() != kBos) {
    throw ContractError("decoder input must begin with BOS");
  }
  return logits(memory(encode(input)), decoder_input);
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<int> Model::greedy_decode(const Memory& memory, std::size_t max_len) const {
  if (max_len < 1) throw ContractError("greedy_decode: max_len must be at least 1");
  NoGradGuard no_grad;
  const std::size_t limit = std::min(max_len, decoder_.max_positions() - 1);
  std::vector<int> prefix{kBos};
  std::vector<int> out;
  while (out.size() < limit) {
    const Tensor step = logits(memory, prefix);
    const std::size_t v = step.dim(1);
    const auto last = step.data().subspan((step.dim(0) - 1) * v, v);
    const int next = static_cast<int>(argmax(last));
    if (next == kEos) break;
    out.push_back(next);
    prefix.push_back(next);
  }
  return out;
}

std::vector<int> Model::greedy_decode(const ModelInput& input, std::size_t max_len) const {
  NoGradGuard no_grad;
  return greedy_decode(memory(encode(input)), max_len);
}

ParameterList Model::parameters() const {
  ParameterList out;
  audio_encoder_.collect("audio_encoder", out);
  if (visual_encoder_) visual_encoder_->collect("visual_encoder", out);
  if (fusion_) fusion_->collect("fusion", out);
  if (audio_qformer_) audio_qformer_->collect("audio_qformer", out);
  decoder_.collect("decoder", out);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void Model::attach_decoder_lora(std::size_t rank) {
  if (cfg_.lora_rank > 0) throw ContractError("decoder already carries LoRA adapters");
  ModelConfig next = cfg_;
  next.lora_rank = rank;
  next.validate();
  Rng lora_rng(derive_seed(seed_, "decoder-lora"));
  decoder_.attach_lora(rank, lora_rng);
  cfg_ = next;
}

void Model::freeze_all() {
  for (auto& p : parameters()) {
    Tensor t = p.tensor;
    t.set_requires_grad(false);
  }
}

Model Model::clone() const {
  Model copy = build(cfg_, seed_);
  const ParameterList src = parameters();
  ParameterList dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto from = src[i].tensor.data();
    auto to = dst[i].tensor.mutable_data();
    std::copy(from.begin(), from.end(), to.begin());
    dst[i].tensor.set_requires_grad(src[i].tensor.requires_grad());
  }
  return copy;
}

Tensor forward(const Model& model, const ModelInput& input, std::span<const int> decoder_input) {
  return model.forward(input, decoder_input);
}

std::vector<int> greedy_decode(const Model& model, const ModelInput& input, std::size_t max_len) {
  return model.greedy_decode(input, max_len);
}

// ---- checkpoints -------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'V', 'F', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IoError("checkpoint truncated");
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const std::string& config_echo) {
  const ParameterList params = model.parameters();
  json header = {{"format", "avfuse-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"seed", model.seed()},
                 {"config_echo", config_echo},
                 {"model", json::parse(model_config_to_json(model.config()))},
                 {"parameters", json::array()}};
  for (const auto& p : params) {
    header["parameters"].push_back({{"name", p.name},
                                    {"shape", p.tensor.shape()},
                                    {"trainable", p.tensor.requires_grad()}});
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kCheckpointVersion);
  write_pod(os, static_cast<std::uint64_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    const auto d = p.tensor.data();
    os.write(reinterpret_cast<const char*>(d.data()),
             static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path + " is not a checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = read_pod<std::uint64_t>(is);
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw IoError("checkpoint header truncated");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  }
  const ModelConfig cfg = model_config_from_json(header.at("model").dump());
  const std::uint64_t seed = header.at("seed");
  Checkpoint ck{Model::build(cfg, seed), seed, header.at("config_echo"), version};
  ParameterList params = ck.model.parameters();
  const json& listed = header.at("parameters");
  if (listed.size() != params.size()) throw IoError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (listed[i].at("name") != params[i].name ||
        listed[i].at("shape").get<Shape>() != params[i].tensor.shape()) {
      throw IoError("checkpoint parameter '" + params[i].name + "' does not match the model");
    }
    auto d = params[i].tensor.mutable_data();
    is.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (!is) throw IoError("checkpoint data truncated");
    params[i].tensor.set_requires_grad(listed[i].at("trainable").get<bool>());
  }
  return ck;
}

}  // namespace avf
