#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "unisa/evaluation.hpp"
#include "unisa/model.hpp"
#include "unisa/objectives.hpp"

namespace unisa {

enum class Stage { Pretrain1, Pretrain2, Finetune };
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

// Desk-scale defaults follow the reference fine-tuning row: lr 5e-6, batch 64, dropout 0.1.
struct TrainConfig {
  Stage stage = Stage::Finetune;
  double learning_rate = 5e-6;
  std::size_t batch_size = 64;
  double dropout_rate = 0.1;
  std::size_t epochs = 1;
  // Overrides epochs when nonzero.
  std::size_t max_steps = 0;
  std::size_t max_len = 128;
  std::uint64_t seed = 0;
  std::size_t centroid_refresh_every = 200;
  LossWeights loss_weights;
  double p_mask = 0.5;
  bool modal_mask = true;
  double grad_clip = 1.0;
  // Intermediate checkpoints every N steps (0: final only).
  std::size_t checkpoint_every = 0;
  // Validation every N epochs during fine-tuning (0: never).
  std::size_t validate_every_epochs = 1;
  std::size_t max_new_tokens = 8;

  void validate() const;
  nlohmann::json to_json() const;
  // Starts from `base` and overrides only the keys present in j.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j);
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) without a schedule.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(std::span<Parameter* const> params);
  double learning_rate() const { return lr_; }
  std::uint64_t steps() const { return t_; }

  void save(Checkpoint& ckpt, std::span<Parameter* const> params) const;
  void load(const Checkpoint& ckpt, std::span<Parameter* const> params);

 private:
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Scales gradients in place so their global L2 norm is at most max_norm; returns the pre-clip norm.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

// Index list visited in seeded permutations, reshuffled at each wrap.
class ShuffledPool {
 public:
  ShuffledPool() = default;
  ShuffledPool(std::vector<std::size_t> members, std::uint64_t seed, std::uint64_t stream);

  std::size_t next();
  bool empty() const { return members_.empty(); }
  std::size_t size() const { return members_.size(); }
  std::size_t cursor() const { return cursor_; }
  std::uint64_t epoch() const { return epoch_; }
  nlohmann::json state() const;
  void restore(const nlohmann::json& j);

 private:
  void reshuffle();

  std::vector<std::size_t> members_;
  std::vector<std::size_t> order_;
  std::uint64_t seed_ = 0, stream_ = 0, epoch_ = 0;
  std::size_t cursor_ = 0;
};

// One pool per task plus the rotation offset that spreads batch remainders.
class TaskPools {
 public:
  TaskPools(const std::vector<SaevalRecord>& records, std::uint64_t seed);
  TaskPools(std::array<std::vector<std::size_t>, 4> members, std::uint64_t seed);

  ShuffledPool& pool(TaskType t) { return pools_[static_cast<std::size_t>(t)]; }
  std::size_t offset() const { return offset_; }
  nlohmann::json state() const;
  void restore(const nlohmann::json& j);

 private:
  friend std::vector<std::size_t> task_average_sample(TaskPools& pools, std::size_t batch_size);
  std::array<ShuffledPool, 4> pools_;
  std::size_t offset_ = 0;
};

// floor(b/4) per task; the b mod 4 extra slots go to consecutive tasks starting at offset.
std::array<std::size_t, 4> task_counts(std::size_t batch_size, std::size_t offset);
// Record indices grouped by task in TaskType order; advances the rotation.
std::vector<std::size_t> task_average_sample(TaskPools& pools, std::size_t batch_size);

struct TrainInputs {
  const std::vector<SaevalRecord>* corpus = nullptr;
  const DatasetRegistry* registry = nullptr;
  const Vocab* vocab = nullptr;
  // Fine-tuning validation records; the training corpus when null.
  const std::vector<SaevalRecord>* validation = nullptr;
  // Metrics log, validation log and checkpoints go here when set.
  std::optional<std::filesystem::path> out_dir;
};

struct StepLog {
  std::size_t step = 0;
  Stage stage = Stage::Finetune;
  LossReport loss;
  double lr = 0.0;
  nlohmann::json to_json() const;
};

struct TrainResult {
  Model model;
  Checkpoint checkpoint;  // final state, resumable
  std::vector<StepLog> log;
  std::vector<nlohmann::json> validation;
};

std::size_t total_steps(const TrainConfig& config, std::size_t corpus_size);

PretrainItem make_pretrain_item(const SaevalRecord& record, Polarity polarity, const Vocab& vocab,
                                const DatasetRegistry& registry, const TrainConfig& config, std::mt19937_64& rng);
FinetuneItem make_finetune_item(const SaevalRecord& record, const Vocab& vocab, const DatasetRegistry& registry,
                                const TrainConfig& config, std::mt19937_64& rng);

// Runs config.stage from `init`, or continues the run stored in `resume_from`.
TrainResult train(const TrainInputs& inputs, const TrainConfig& config, Model init,
                  const Checkpoint* resume_from = nullptr);

TrainResult run_pretrain_stage1(const TrainInputs& inputs, TrainConfig config, Model init);
TrainResult run_pretrain_stage2(const TrainInputs& inputs, TrainConfig config, Model init);
TrainResult run_finetune(const TrainInputs& inputs, TrainConfig config, Model init);

// Model configuration sized for a vocabulary and registry, with optional JSON overrides.
ModelConfig model_config_for(const Vocab& vocab, const DatasetRegistry& registry,
                             const nlohmann::json& overrides = nlohmann::json::object());

// Vocabulary, registry and model config stored with every training checkpoint.
Vocab vocab_from_checkpoint(const Checkpoint& ckpt);
DatasetRegistry registry_from_checkpoint(const Checkpoint& ckpt);

inline TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

}  // namespace unisa
