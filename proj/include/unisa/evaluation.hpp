#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "unisa/data.hpp"
#include "unisa/prompt.hpp"

namespace unisa {

class Model;

// Overall accuracy.
double metric_wa(std::span<const std::string> golds, std::span<const std::string> preds);
// Support-weighted F1 over the classes present in golds.
double metric_wf1(std::span<const std::string> golds, std::span<const std::string> preds);
// Macro F1 over non-neutral gold classes; neutral predictions still count as errors.
double metric_mf1_excl_neutral(std::span<const std::string> golds, std::span<const std::string> preds,
                               const std::string& neutral_label);

struct MsaMetrics {
  double mae = 0.0;
  double acc7 = 0.0;
  double acc2 = 0.0;  // NaN when every gold score is zero
};
MsaMetrics metrics_msa(std::span<const double> golds, std::span<const double> preds);

struct SamplePrediction {
  LabelValue gold;
  LabelValue predicted;
  bool fallback = false;
};

struct EvalResult {
  std::string dataset_id;
  std::map<std::string, double> metrics;
  std::vector<SamplePrediction> samples;

  nlohmann::json to_json() const;
};

// Metrics declared for the dataset, computed from decoded predictions.
EvalResult score_dataset(const DatasetSpec& dataset, std::vector<SamplePrediction> samples);

// Greedy generation and decoding for every record, grouped per registered dataset in registry
// order. Datasets without records get an empty result.
std::vector<EvalResult> evaluate(Model& model, std::span<const SaevalRecord> records, const Vocab& vocab,
                                 const DatasetRegistry& registry, std::size_t max_new = 8);

// Aligned text table, one row per dataset and one column per metric name.
std::string format_eval_table(std::span<const EvalResult> results);

}  // namespace unisa
