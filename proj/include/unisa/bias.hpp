#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "unisa/data.hpp"

namespace unisa {

class Model;
class Vocab;

// acc[i][j]: accuracy in percent of dataset i's samples under dataset j's label system.
struct AccuracyMatrix {
  std::vector<std::string> datasets;
  std::vector<std::vector<double>> acc;

  std::size_t size() const { return datasets.size(); }
  std::size_t index_of(std::string_view id) const;
  // Square, entries finite and within [0, 100], dataset ids unique.
  void validate() const;
  nlohmann::json to_json() const;
  static AccuracyMatrix from_json(const nlohmann::json& j);
  static AccuracyMatrix load(const std::filesystem::path& path);
};

// |own - other|, both in percent.
double bias_ana(double acc_own, double acc_other);
// | |acc[i][i] - acc[i][j]| - |acc[j][j] - acc[j][i]| |
double bias_sub(const AccuracyMatrix& m, std::size_t i, std::size_t j);

struct BiasReport {
  std::vector<std::string> datasets;
  std::vector<std::vector<double>> ana;  // ana[i][j] = bias_ana(acc[i][i], acc[i][j])
  std::vector<std::vector<double>> sub;  // symmetric, zero diagonal

  nlohmann::json to_json() const;
};

BiasReport bias_report(const AccuracyMatrix& m);

// Aligned text tables: accuracies, annotation bias, subjective bias.
std::string format_accuracy_table(const AccuracyMatrix& m);
std::string format_bias_report(const AccuracyMatrix& m, const BiasReport& r);

// One encoder representation per sample.
struct EmbeddingRow {
  std::string dataset_id;
  std::string sample_id;
  std::string label;
  std::vector<double> vector;
};

void write_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRow> rows);
std::vector<EmbeddingRow> read_embeddings(const std::filesystem::path& path);

// Clean pooled encodings of every record; labels as cluster labels (score-bin words for MSA).
std::vector<EmbeddingRow> export_embeddings(Model& model, std::span<const SaevalRecord> records, const Vocab& vocab,
                                            const DatasetRegistry& registry);

// Maps a target-system label to the source label it counts as, per (source, target) pair.
// Pairs or labels without an entry fall back to exact string match.
class LabelCorrespondence {
 public:
  void set(const std::string& source, const std::string& target, const std::string& target_label,
           const std::string& source_label);
  const std::string& map(const std::string& source, const std::string& target, const std::string& target_label) const;

  // {"<source>": {"<target>": {"<target label>": "<source label>"}}}
  static LabelCorrespondence from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

 private:
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>> maps_;
};

// Gold-label clusters: exact means in input order.
std::map<std::string, std::vector<double>> label_centroids(std::span<const EmbeddingRow> rows);

struct CrossAnnotation {
  std::vector<std::string> pseudo;  // nearest target cluster per source row
  double accuracy = 0.0;            // percent
};

// Nearest target centroid per source sample (ties to the lexicographically smaller label),
// scored against the source gold labels through the correspondence map.
CrossAnnotation cross_annotate(std::span<const EmbeddingRow> source, const std::string& target_id,
                               const std::map<std::string, std::vector<double>>& target_centroids,
                               const LabelCorrespondence& correspondence = {});

// Full matrix over `datasets`, rows grouped by dataset_id.
AccuracyMatrix accuracy_matrix(std::span<const EmbeddingRow> rows, const std::vector<std::string>& datasets,
                               const LabelCorrespondence& correspondence = {});

}  // namespace unisa
