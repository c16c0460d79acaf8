#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avfuse/fusion.hpp"
#include "avfuse/layers.hpp"
#include "avfuse/tensor.hpp"

namespace avf {

// Reserved ids shared by every model and the synthetic vocabulary.
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kPad = 2;
inline constexpr int kFirstContentToken = 3;

enum class ModelVariant {
  kAudioOnly,    // decoder attends to the audio encoder output
  kAudioSwqf,    // window Q-Former inserted between audio encoder and decoder
  kAudioVisual,  // dual encoder with a fusion module (variant in FusionConfig)
};

const char* to_string(ModelVariant variant);
ModelVariant parse_model_variant(const std::string& s);

struct ModelConfig {
  std::size_t vocab = 64;
  std::size_t width = 64;
  std::size_t audio_input_width = 32;
  std::size_t visual_input_width = 48;
  std::size_t visual_width = 48;
  std::size_t encoder_layers = 2;
  std::size_t encoder_heads = 4;
  std::size_t decoder_layers = 2;
  std::size_t decoder_heads = 4;
  std::size_t ffn_multiplier = 4;
  std::size_t max_target_length = 32;
  ModelVariant variant = ModelVariant::kAudioVisual;
  FusionConfig fusion;
  bool freeze_encoders = true;
  // > 0: decoder attention projections carry LoRA adapters and the rest of
  // the decoder is frozen.
  std::size_t lora_rank = 0;

  void validate() const;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Raw per-frame inputs for one sample. visual may be undefined for
// audio-only variants; visual_valid (optional) flags real visual rows.
struct ModelInput {
  Tensor audio;   // [T × audio_input_width]
  Tensor visual;  // [Lv × visual_input_width]
  std::vector<std::uint8_t> visual_valid;
};

// Stand-in for a pretrained encoder: input projection, sinusoidal positions,
// pre-norm self-attention blocks and a final layer norm.
class ToyEncoder {
 public:
  ToyEncoder() = default;
  ToyEncoder(std::size_t input_width, std::size_t width, std::size_t layers, std::size_t heads,
             std::size_t ffn_multiplier, Rng& rng);

  Tensor forward(const Tensor& x, std::span<const std::uint8_t> valid = {}) const;

  void set_frozen(bool frozen);
  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  struct Block {
    LayerNorm norm_attn;
    MultiHeadAttention attn;
    LayerNorm norm_ffn;
    FeedForward ffn;
  };
  LinearLayer input_;
  std::vector<Block> blocks_;
  LayerNorm final_;
};

// Causal transformer decoder with cross-attention to a memory sequence.
class Decoder {
 public:
  Decoder() = default;
  Decoder(std::size_t vocab, std::size_t width, std::size_t layers, std::size_t heads,
          std::size_t ffn_multiplier, std::size_t max_positions, Rng& rng);

  // tokens [L] → logits [L × V].
  Tensor forward(std::span<const int> tokens, const Tensor& memory,
                 std::span<const std::uint8_t> memory_valid = {}) const;

  void set_frozen(bool frozen);
  // Adapters on the query/value projections of every attention block.
  void attach_lora(std::size_t rank, Rng& rng);
  void collect(const std::string& prefix, ParameterList& out) const;
  std::size_t max_positions() const { return positions_.dim(0); }
  LinearLayer& head() { return head_; }

 private:
  struct Block {
    LayerNorm norm_self;
    MultiHeadAttention self_attn;
    LayerNorm norm_cross;
    MultiHeadAttention cross_attn;
    LayerNorm norm_ffn;
    FeedForward ffn;
  };
  Embedding tokens_;
  Tensor positions_;  // [max_positions × d]
  std::vector<Block> blocks_;
  LayerNorm final_;
  LinearLayer head_;
};

struct Memory {
  Tensor states;
  std::vector<std::uint8_t> valid;  // empty: every row valid
};

struct EncodedInput {
  Tensor audio;
  Tensor visual;
  std::vector<std::uint8_t> visual_valid;
};

class Model {
 public:
  static Model build(const ModelConfig& cfg, std::uint64_t seed);

  EncodedInput encode(const ModelInput& input) const;
  Memory memory(const EncodedInput& encoded) const;
  Tensor logits(const Memory& memory, std::span<const int> decoder_input) const;
  // Teacher-forced next-token logits; decoder_input starts with BOS.
  Tensor forward(const ModelInput& input, std::span<const int> decoder_input) const;

  std::vector<int> greedy_decode(const Memory& memory, std::size_t max_len) const;
  std::vector<int> greedy_decode(const ModelInput& input, std::size_t max_len) const;

  ParameterList parameters() const;
  std::size_t parameter_count() const;

  // Freezes the decoder and adds LoRA adapters to its attention projections.
  void attach_decoder_lora(std::size_t rank);
  // Marks every parameter frozen (teacher use).
  void freeze_all();
  // Deep copy with independent parameter storage.
  Model clone() const;

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  ToyEncoder& audio_encoder() { return audio_encoder_; }
  std::optional<ToyEncoder>& visual_encoder() { return visual_encoder_; }
  std::optional<FusionModule>& fusion() { return fusion_; }
  std::optional<WindowQFormer>& audio_qformer() { return audio_qformer_; }
  Decoder& decoder() { return decoder_; }

 private:
  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  ToyEncoder audio_encoder_;
  std::optional<ToyEncoder> visual_encoder_;
  std::optional<FusionModule> fusion_;
  std::optional<WindowQFormer> audio_qformer_;
  Decoder decoder_;
};

Tensor forward(const Model& model, const ModelInput& input, std::span<const int> decoder_input);
std::vector<int> greedy_decode(const Model& model, const ModelInput& input, std::size_t max_len);

// Index of the largest value; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

// ---- checkpoints ---------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  std::uint64_t seed = 0;
  std::string config_echo;
  std::uint32_t version = kCheckpointVersion;
};

void save_checkpoint(const std::string& path, const Model& model, const std::string& config_echo);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace avf
