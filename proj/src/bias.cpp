#include "unisa/bias.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "unisa/error.hpp"
#include "unisa/model.hpp"
#include "unisa/objectives.hpp"

namespace unisa {

std::size_t AccuracyMatrix::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < datasets.size(); ++i)
    if (datasets[i] == id) return i;
  throw ConfigError("dataset '" + std::string(id) + "' is not in the accuracy matrix");
}

void AccuracyMatrix::validate() const {
  if (datasets.empty()) throw ConfigError("accuracy matrix has no datasets");
  if (std::set<std::string>(datasets.begin(), datasets.end()).size() != datasets.size()) {
    throw ConfigError("accuracy matrix dataset ids are not unique");
  }
  if (acc.size() != datasets.size()) throw ConfigError("accuracy matrix must have one row per dataset");
  for (const auto& row : acc) {
    if (row.size() != datasets.size()) throw ConfigError("accuracy matrix is not square");
    for (double v : row) {
      if (!std::isfinite(v) || v < 0.0 || v > 100.0) {
        throw ConfigError("accuracy " + std::to_string(v) + " is outside [0, 100]");
      }
    }
  }
}

nlohmann::json AccuracyMatrix::to_json() const { return {{"datasets", datasets}, {"accuracy", acc}}; }

AccuracyMatrix AccuracyMatrix::from_json(const nlohmann::json& j) {
  AccuracyMatrix m;
  try {
    m.datasets = j.at("datasets").get<std::vector<std::string>>();
    m.acc = j.at("accuracy").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("accuracy matrix: ") + e.what());
  }
  m.validate();
  return m;
}

AccuracyMatrix AccuracyMatrix::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open accuracy matrix " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return from_json(j);
}

double bias_ana(double acc_own, double acc_other) {
  for (double v : {acc_own, acc_other}) {
    if (!(v >= 0.0 && v <= 100.0)) throw ContractError("accuracy " + std::to_string(v) + " is outside [0, 100]");
  }
  return std::abs(acc_own - acc_other);
}

double bias_sub(const AccuracyMatrix& m, std::size_t i, std::size_t j) {
  if (i >= m.size() || j >= m.size()) throw IndexError("bias_sub index out of range");
  return std::abs(bias_ana(m.acc[i][i], m.acc[i][j]) - bias_ana(m.acc[j][j], m.acc[j][i]));
}

nlohmann::json BiasReport::to_json() const {
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t i = 0; i < datasets.size(); ++i)
    for (std::size_t j = i + 1; j < datasets.size(); ++j)
      pairs.push_back({{"a", datasets[i]}, {"b", datasets[j]}, {"bias_sub", sub[i][j]}});
  return {{"datasets", datasets}, {"bias_ana", ana}, {"bias_sub", sub}, {"pairs", pairs}};
}

BiasReport bias_report(const AccuracyMatrix& m) {
  m.validate();
  BiasReport r;
  r.datasets = m.datasets;
  const std::size_t n = m.size();
  r.ana.assign(n, std::vector<double>(n, 0.0));
  r.sub.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      r.ana[i][j] = bias_ana(m.acc[i][i], m.acc[i][j]);
      r.sub[i][j] = bias_sub(m, i, j);
    }
  return r;
}

namespace {

std::string table(const std::string& title, const std::vector<std::string>& rows, const std::vector<std::string>& cols,
                  const std::vector<std::vector<double>>& v) {
  std::size_t w = 8;
  for (const auto& s : rows) w = std::max(w, s.size());
  std::size_t cw = 8;
  for (const auto& s : cols) cw = std::max(cw, s.size());
  std::ostringstream out;
  out << title << '\n' << std::string(w, ' ');
  for (const auto& c : cols) out << "  " << std::string(cw - c.size(), ' ') << c;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << rows[i] << std::string(w - rows[i].size(), ' ');
    for (double x : v[i]) {
      std::snprintf(buf, sizeof buf, "  %*.2f", static_cast<int>(cw), x);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

std::vector<std::string> acc_columns(const std::vector<std::string>& ids) {
  std::vector<std::string> c;
  for (const auto& id : ids) c.push_back("ACC_" + id);
  return c;
}

}  // namespace

std::string format_accuracy_table(const AccuracyMatrix& m) {
  return table("Accuracy (%) under each annotation system", m.datasets, acc_columns(m.datasets), m.acc);
}

std::string format_bias_report(const AccuracyMatrix& m, const BiasReport& r) {
  std::ostringstream out;
  out << format_accuracy_table(m) << '\n'
      << table("Annotation bias |ACC_own - ACC_other| (%)", r.datasets, acc_columns(r.datasets), r.ana) << '\n'
      << table("Subjective bias between datasets (%)", r.datasets, r.datasets, r.sub);
  return out.str();
}

// --- embeddings --------------------------------------------------------------------------

void write_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : rows) {
    out << nlohmann::json{{"dataset_id", r.dataset_id}, {"sample_id", r.sample_id}, {"label", r.label}, {"vector", r.vector}}
               .dump()
        << '\n';
  }
}

std::vector<EmbeddingRow> read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings " + path.string());
  std::vector<EmbeddingRow> rows;
  std::string line;
  std::size_t n = 0, dim = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(n);
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError(where + ": invalid JSON");
    EmbeddingRow r;
    try {
      r.dataset_id = j.at("dataset_id").get<std::string>();
      r.sample_id = j.at("sample_id").get<std::string>();
      r.label = j.at("label").get<std::string>();
      r.vector = j.at("vector").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    if (r.vector.empty()) throw DataError(where + ": empty vector");
    if (dim == 0) dim = r.vector.size();
    if (r.vector.size() != dim) throw DataError(where + ": vector length differs from earlier rows");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<EmbeddingRow> export_embeddings(Model& model, std::span<const SaevalRecord> records, const Vocab& vocab,
                                            const DatasetRegistry& registry) {
  std::vector<EmbeddingRow> rows;
  std::map<std::string, std::size_t> seen;
  for (const SaevalRecord& r : records) {
    EmbeddingRow e;
    e.dataset_id = r.dataset_id;
    e.sample_id = r.dataset_id + "-" + std::to_string(seen[r.dataset_id]++);
    e.label = cep_label(r.label);
    e.vector = pooled_representation(model, build_prompt(r, vocab, registry, model.config().max_len));
    rows.push_back(std::move(e));
  }
  return rows;
}

// --- cross annotation ----------------------------------------------------------------------

void LabelCorrespondence::set(const std::string& source, const std::string& target, const std::string& target_label,
                              const std::string& source_label) {
  maps_[{source, target}][target_label] = source_label;
}

const std::string& LabelCorrespondence::map(const std::string& source, const std::string& target,
                                            const std::string& target_label) const {
  const auto it = maps_.find({source, target});
  if (it == maps_.end()) return target_label;
  const auto l = it->second.find(target_label);
  return l == it->second.end() ? target_label : l->second;
}

LabelCorrespondence LabelCorrespondence::from_json(const nlohmann::json& j) {
  LabelCorrespondence c;
  try {
    for (const auto& [src, targets] : j.items())
      for (const auto& [tgt, labels] : targets.items())
        for (const auto& [tl, sl] : labels.items()) c.set(src, tgt, tl, sl.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("label correspondence: ") + e.what());
  }
  return c;
}

nlohmann::json LabelCorrespondence::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, labels] : maps_)
    for (const auto& [tl, sl] : labels) j[key.first][key.second][tl] = sl;
  return j;
}

std::map<std::string, std::vector<double>> label_centroids(std::span<const EmbeddingRow> rows) {
  std::map<std::string, std::vector<double>> sums;
  std::map<std::string, std::size_t> counts;
  for (const auto& r : rows) {
    auto& s = sums[r.label];
    if (s.empty()) s.assign(r.vector.size(), 0.0);
    if (s.size() != r.vector.size()) throw DimensionError("embedding rows differ in length");
    for (std::size_t k = 0; k < s.size(); ++k) s[k] += r.vector[k];
    ++counts[r.label];
  }
  for (auto& [label, s] : sums)
    for (double& x : s) x /= static_cast<double>(counts[label]);
  return sums;
}

CrossAnnotation cross_annotate(std::span<const EmbeddingRow> source, const std::string& target_id,
                               const std::map<std::string, std::vector<double>>& target_centroids,
                               const LabelCorrespondence& correspondence) {
  if (target_centroids.empty()) throw ContractError("cross_annotate: target '" + target_id + "' has no clusters");
  CrossAnnotation out;
  std::size_t hit = 0;
  for (const auto& r : source) {
    const std::string& pseudo = nearest_label(r.vector, target_centroids);
    hit += correspondence.map(r.dataset_id, target_id, pseudo) == r.label;
    out.pseudo.push_back(pseudo);
  }
  out.accuracy = source.empty() ? 0.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(source.size());
  return out;
}

AccuracyMatrix accuracy_matrix(std::span<const EmbeddingRow> rows, const std::vector<std::string>& datasets,
                               const LabelCorrespondence& correspondence) {
  std::map<std::string, std::vector<EmbeddingRow>> by;
  for (const auto& r : rows) by[r.dataset_id].push_back(r);
  AccuracyMatrix m;
  m.datasets = datasets;
  for (const auto& d : datasets) {
    if (by[d].empty()) throw DataError("no embeddings for dataset '" + d + "'");
  }
  for (const auto& di : datasets) {
    std::vector<double> row;
    for (const auto& dj : datasets) row.push_back(cross_annotate(by[di], dj, label_centroids(by[dj]), correspondence).accuracy);
    m.acc.push_back(std::move(row));
  }
  return m;
}

}  // namespace unisa
