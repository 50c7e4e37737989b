#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "unisa/model.hpp"

namespace unisa {

struct LossWeights {
  double mcm = 1.0;
  double spp = 1.0;
  double ccl = 1.0;
  double cep = 1.0;
};

struct LossReport {
  double mcm = 0.0;
  double spp = 0.0;
  double ccl = 0.0;
  double cep = 0.0;
  double gen = 0.0;
  double total = 0.0;
};

// Per-task label vocabulary for cross-task prediction. Categorical tasks use the union of
// their datasets' answer sets in registry order; MSA uses the seven score-bin words.
struct CepLabelSpaces {
  std::array<std::vector<std::string>, 4> labels;

  static CepLabelSpaces from_registry(const DatasetRegistry& registry);
  const std::vector<std::string>& of(TaskType t) const { return labels[static_cast<std::size_t>(t)]; }
  std::size_t index_of(TaskType t, const std::string& label) const;
};

// Label used for clustering and cross-task prediction: the gold string, or the score bin word.
std::string cep_label(const LabelValue& label);

// Indexed by TaskType.
using PseudoLabelSet = std::array<std::string, 4>;

struct CentroidIndex {
  // Per task: label -> centroid. std::map iteration order gives the lexicographic tie-break.
  std::array<std::map<std::string, std::vector<double>>, 4> centroids;
  std::uint64_t revision = 0;

  const std::map<std::string, std::vector<double>>& of(TaskType t) const {
    return centroids[static_cast<std::size_t>(t)];
  }
  bool complete() const;
  nlohmann::json to_json() const;
  static CentroidIndex from_json(const nlohmann::json& j);
};

// Exact per-(task, label) means, accumulated in input order. Labels of `expected` that have no
// members are skipped with a warning.
CentroidIndex build_centroids(std::span<const std::vector<double>> pooled, std::span<const TaskType> tasks,
                              std::span<const std::string> labels, std::uint64_t revision = 0,
                              const CepLabelSpaces* expected = nullptr);

// Nearest centroid by Euclidean distance; ties go to the lexicographically smaller label.
const std::string& nearest_label(std::span<const double> vec, const std::map<std::string, std::vector<double>>& centroids);

PseudoLabelSet assign_pseudo_labels(std::span<const double> pooled, const CentroidIndex& centroids, TaskType own_task,
                                    const std::string& gold);

// One pre-training sample. `prompt` already has its modal setting applied.
struct PretrainItem {
  PromptSequence prompt;
  MaskPlan plan;
  TaskType task = TaskType::CA;
  Polarity polarity = Polarity::Neutral;
  PseudoLabelSet pseudo;
  std::uint64_t pseudo_revision = 0;
  bool has_pseudo = false;
};

// One fine-tuning sample: the decoder learns target + <eos>.
struct FinetuneItem {
  PromptSequence prompt;
  std::vector<int> target;
};

struct ObjectiveContext {
  const Vocab* vocab = nullptr;
  CepLabelSpaces spaces;
  LossWeights weights;
  double dropout_rate = 0.0;
  // Dropout streams are keyed by (seed, sample, pass) so every loss can be recomputed alone.
  std::uint64_t seed = 0;
};

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t sample, std::uint64_t pass);

// Each returns a scalar graph node; batch losses are per-sample sums averaged over the batch.
Var loss_mcm(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx);
Var loss_spp(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx);
Var loss_ccl(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx);
Var loss_cep(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx,
             const CentroidIndex& centroids);
Var loss_generation(Graph& g, Model& model, std::span<const FinetuneItem> batch, const ObjectiveContext& ctx);

// Distance-ratio contrast over pooled rows [b x d] with integer class labels.
Var loss_ccl(Var pooled, std::span<const int> labels);
double loss_ccl(const Tensor& pooled, std::span<const int> labels);

struct StageLoss {
  Var total;
  LossReport report;
};

StageLoss stage1_loss(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx);
StageLoss stage2_loss(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx,
                      const CentroidIndex& centroids);

// Clean pooled encoder representation, no dropout.
std::vector<double> pooled_representation(Model& model, const PromptSequence& prompt);

}  // namespace unisa
