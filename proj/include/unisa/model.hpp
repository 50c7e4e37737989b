#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "unisa/autograd.hpp"
#include "unisa/masking.hpp"
#include "unisa/prompt.hpp"

namespace unisa {

// Desk-scale defaults. Reference full-scale settings: 768 hidden, 12 heads, lr 5e-6,
// batch 64, dropout 0.1.
struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t num_datasets = 0;
  std::size_t text_embed_dim = 64;
  std::size_t acoustic_dim = 0;  // 0: no acoustic stream
  std::size_t visual_dim = 0;    // 0: no visual stream
  std::size_t model_dim = 64;
  std::size_t layers_enc = 2;
  std::size_t layers_dec = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t max_len = 128;
  std::size_t max_dec_len = 16;
  double dropout_rate = 0.1;
  double init_std = 0.02;
  std::uint64_t init_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct Linear {
  Parameter w;  // [in x out]
  Parameter b;  // [1 x out]
};

struct LayerNormParams {
  Parameter gamma;
  Parameter beta;
};

struct AttentionParams {
  Linear q, k, v, o;
};

struct FeedForwardParams {
  Linear in, out;
};

struct EncoderLayer {
  LayerNormParams ln1, ln2;
  AttentionParams self;
  FeedForwardParams ffn;
};

struct DecoderLayer {
  LayerNormParams ln1, ln2, ln3;
  AttentionParams self, cross;
  FeedForwardParams ffn;
};

// Dropout source for one forward pass; null means deterministic evaluation.
struct DropoutCtx {
  std::mt19937_64* rng = nullptr;
  double rate = 0.0;
};

struct EncodeOptions {
  const MaskPlan* mask_plan = nullptr;
  // Append <pad> positions up to this stream length (masked from attention and pooling).
  std::size_t pad_to = 0;
  DropoutCtx dropout;
};

struct EncoderOutput {
  Var states;  // [stream_length x model_dim], pads included
  Var pooled;  // [1 x model_dim]
  std::size_t length = 0;  // unpadded stream length
  std::size_t token_count = 0;
};

class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  // Fixed traversal order; names are unique.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter& parameter(std::string_view name);
  std::size_t parameter_count() const;

  Parameter& token_embedding() { return tok_emb_; }
  Parameter& dataset_embedding() { return data_emb_; }

  EncoderOutput encode(Graph& g, const PromptSequence& prompt, const EncodeOptions& options = {});

  // Final decoder states [len x model_dim] for a teacher-forced input.
  Var decode_hidden(Graph& g, const EncoderOutput& enc, std::span<const int> dec_input, const DropoutCtx& dropout = {});
  // Logits for encoder or decoder states over the full vocabulary, or over `columns` only.
  Var output_logits(Graph& g, Var hidden, std::span<const int> columns = {});

  // Greedy decoding without dropout; output ends with <eos> when one was produced.
  std::vector<int> generate(const PromptSequence& prompt, std::size_t max_new);

 private:
  Var linear(Graph& g, Linear& l, Var x);
  Var norm(Graph& g, LayerNormParams& p, Var x);
  Var attention(Graph& g, AttentionParams& p, Var q_in, Var kv_in, const Tensor* additive_mask);
  Var feed_forward(Graph& g, FeedForwardParams& p, Var x, const DropoutCtx& dropout);

  ModelConfig config_;
  Parameter tok_emb_;  // [vocab x text_embed_dim], tied with the output projection
  Parameter out_bias_;
  std::optional<Linear> text_in_;   // text_embed_dim -> model_dim when they differ
  std::optional<Linear> text_out_;  // model_dim -> text_embed_dim when they differ
  std::optional<Linear> acoustic_proj_;
  std::optional<Linear> visual_proj_;
  Parameter acoustic_mask_;
  Parameter visual_mask_;
  Parameter type_emb_;  // text, acoustic, visual
  Parameter pos_emb_;
  Parameter dec_pos_emb_;
  Parameter data_emb_;  // [num_datasets x model_dim], read through a one-hot row
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  LayerNormParams enc_final_, dec_final_;
};

// --- checkpoints ---------------------------------------------------------------------

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor* find(std::string_view name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, DType dtype = DType::F64);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Named parameter arrays plus the config under header["model"].
Checkpoint model_checkpoint(const Model& model);
// Restores parameters in place; any missing array or shape mismatch throws CheckpointError.
void load_parameters(Model& model, const Checkpoint& ckpt);
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace unisa
