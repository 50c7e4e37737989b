#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace unisa {

enum class TaskType { ABSA, MSA, ERC, CA };
inline constexpr std::array<TaskType, 4> kAllTasks = {TaskType::ABSA, TaskType::MSA, TaskType::ERC, TaskType::CA};

std::string_view to_string(TaskType t);
TaskType parse_task_type(std::string_view s);

enum class Polarity { Positive, Negative, Neutral };
inline constexpr std::array<Polarity, 3> kAllPolarities = {Polarity::Positive, Polarity::Negative, Polarity::Neutral};

std::string_view to_string(Polarity p);

// Frames × feature-dim matrix of precomputed acoustic or visual features.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};
using FeaturePtr = std::shared_ptr<const FeatureMatrix>;

// Categorical label string, or an MSA sentiment score in [-3, 3].
using LabelValue = std::variant<std::string, double>;

inline bool is_scalar(const LabelValue& v) { return std::holds_alternative<double>(v); }
std::string label_to_string(const LabelValue& v);

struct ContextTurn {
  std::string speaker_id;
  std::string text;
  friend bool operator==(const ContextTurn&, const ContextTurn&) = default;
};

// Joins combined queries inside SaevalRecord::text. Control characters are rejected
// in corpus text, so only combine_queries can introduce it.
inline constexpr std::string_view kQuerySeparator = "\x1f";

struct SaevalRecord {
  TaskType task_type = TaskType::CA;
  std::string dataset_id;
  std::string text;
  FeaturePtr audio;
  FeaturePtr image;
  std::vector<ContextTurn> context;
  std::optional<std::string> speaker_id;
  std::optional<std::size_t> utterance_index;
  LabelValue label;
};

bool operator==(const SaevalRecord& a, const SaevalRecord& b);

struct DatasetSpec {
  std::string id;
  TaskType task_type = TaskType::CA;
  // Empty for MSA datasets, whose labels are scalars.
  std::vector<std::string> answer_set;
  std::size_t acoustic_dim = 0;
  std::size_t visual_dim = 0;
  std::vector<std::string> metrics;
  std::optional<std::string> neutral_label;
  std::map<std::string, Polarity> polarity_overrides;

  bool is_regression() const { return task_type == TaskType::MSA; }
  bool has_label(std::string_view label) const;
};

// Declarative dataset table; declaration order fixes dataset-embedding indices.
class DatasetRegistry {
 public:
  DatasetRegistry() = default;
  explicit DatasetRegistry(std::vector<DatasetSpec> datasets);

  static DatasetRegistry load(const std::filesystem::path& path);
  static DatasetRegistry from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  const std::vector<DatasetSpec>& datasets() const { return datasets_; }
  std::size_t size() const { return datasets_.size(); }
  const DatasetSpec* find(std::string_view id) const;
  const DatasetSpec& at(std::string_view id) const;
  std::size_t index_of(std::string_view id) const;

  // Shared nonzero acoustic/visual dims across datasets (0 when no dataset declares one).
  std::size_t acoustic_dim() const;
  std::size_t visual_dim() const;

 private:
  std::vector<DatasetSpec> datasets_;
};

inline const std::vector<std::string> kKnownMetrics = {"WA", "WF1", "MF1", "MAE", "ACC7", "ACC2"};

// A categorical label must be one word token: [A-Za-z0-9_]+.
bool is_atomic_label(std::string_view s);

// --- corpus I/O ------------------------------------------------------------------

std::vector<SaevalRecord> load_corpus(const std::filesystem::path& path, const DatasetRegistry& registry);
// Parses one JSONL line; `where` prefixes error messages (e.g. "file:12").
SaevalRecord parse_record(const nlohmann::json& j, const DatasetRegistry& registry,
                          const std::filesystem::path& base_dir, const std::string& where);
void validate_record(const SaevalRecord& r, const DatasetRegistry& registry);

nlohmann::json record_to_json(const SaevalRecord& r);
// Writes features inline so the file is self-contained.
void save_corpus(const std::filesystem::path& path, const std::vector<SaevalRecord>& records);

// Binary sidecar: "SAEV", u32 rows, u32 cols, rows*cols float32, all little-endian.
FeatureMatrix read_sidecar(const std::filesystem::path& path);
void write_sidecar(const std::filesystem::path& path, const FeatureMatrix& m);

// --- polarity --------------------------------------------------------------------

Polarity to_polarity(const LabelValue& label, const DatasetSpec& dataset);
Polarity to_polarity(const LabelValue& label, std::string_view dataset_id, const DatasetRegistry& registry);

struct DataPool {
  Polarity polarity = Polarity::Neutral;
  // Indices into the corpus the pools were built from.
  std::vector<std::size_t> members;
};

std::map<Polarity, DataPool> build_pools(const std::vector<SaevalRecord>& records, const DatasetRegistry& registry);

// Joins two same-polarity queries into one record labelled with the shared polarity.
SaevalRecord combine_queries(const SaevalRecord& a, const SaevalRecord& b, const DatasetRegistry& registry);

}  // namespace unisa
