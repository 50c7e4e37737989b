#include "unisa/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "unisa/error.hpp"

namespace unisa {

using nlohmann::json;

std::string_view to_string(TaskType t) {
  switch (t) {
    case TaskType::ABSA: return "ABSA";
    case TaskType::MSA: return "MSA";
    case TaskType::ERC: return "ERC";
    case TaskType::CA: return "CA";
  }
  return "?";
}

TaskType parse_task_type(std::string_view s) {
  for (TaskType t : kAllTasks) {
    if (to_string(t) == s) return t;
  }
  throw DataError("unknown task type '" + std::string(s) + "'");
}

std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::Positive: return "positive";
    case Polarity::Negative: return "negative";
    case Polarity::Neutral: return "neutral";
  }
  return "?";
}

namespace {

Polarity parse_polarity(std::string_view s) {
  for (Polarity p : kAllPolarities) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("unknown polarity '" + std::string(s) + "'");
}

// Fine-grained label -> polarity. Valence-ambiguous classes sit on neutral.
const std::map<std::string, Polarity, std::less<>>& default_polarity_table() {
  static const std::map<std::string, Polarity, std::less<>> table = {
      {"positive", Polarity::Positive},   {"joy", Polarity::Positive},
      {"happy", Polarity::Positive},      {"happiness", Polarity::Positive},
      {"excited", Polarity::Positive},    {"negative", Polarity::Negative},
      {"anger", Polarity::Negative},      {"angry", Polarity::Negative},
      {"sad", Polarity::Negative},        {"sadness", Polarity::Negative},
      {"fear", Polarity::Negative},       {"fearful", Polarity::Negative},
      {"disgust", Polarity::Negative},    {"frustrated", Polarity::Negative},
      {"hate", Polarity::Negative},       {"neutral", Polarity::Neutral},
      {"no-emotion", Polarity::Neutral},  {"no_emotion", Polarity::Neutral},
      {"surprise", Polarity::Neutral},    {"surprised", Polarity::Neutral},
      {"conflict", Polarity::Neutral},
  };
  return table;
}

bool has_control_chars(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return (u < 0x20 && c != '\t' && c != '\n' && c != '\r') || u == 0x7f;
  });
}

FeaturePtr parse_features(const json& j, const std::filesystem::path& base_dir, const char* key) {
  if (j.is_null()) return nullptr;
  if (j.is_string()) {
    std::filesystem::path p = j.get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    return std::make_shared<FeatureMatrix>(read_sidecar(p));
  }
  if (!j.is_array() || j.empty()) {
    throw DataError(std::string("'") + key + "' must be null, a sidecar path, or a non-empty array of frames");
  }
  FeatureMatrix m;
  m.rows = j.size();
  for (const json& frame : j) {
    if (!frame.is_array() || frame.empty()) throw DataError(std::string("'") + key + "' frames must be non-empty arrays");
    if (m.cols == 0) m.cols = frame.size();
    if (frame.size() != m.cols) throw DataError(std::string("'") + key + "' frames have ragged widths");
    for (const json& v : frame) {
      if (!v.is_number()) throw DataError(std::string("'") + key + "' holds a non-numeric value");
      m.values.push_back(v.get<double>());
    }
  }
  return std::make_shared<FeatureMatrix>(std::move(m));
}

json features_to_json(const FeaturePtr& f) {
  if (!f) return nullptr;
  json frames = json::array();
  for (std::size_t r = 0; r < f->rows; ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < f->cols; ++c) row.push_back(f->at(r, c));
    frames.push_back(std::move(row));
  }
  return frames;
}

bool features_equal(const FeaturePtr& a, const FeaturePtr& b) {
  if (!a || !b) return !a && !b;
  return *a == *b;
}

std::string speaker_from_json(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw DataError("speaker ids must be strings or integers");
}

}  // namespace

std::string label_to_string(const LabelValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  std::ostringstream os;
  os << std::get<double>(v);
  return os.str();
}

bool operator==(const SaevalRecord& a, const SaevalRecord& b) {
  return a.task_type == b.task_type && a.dataset_id == b.dataset_id && a.text == b.text &&
         features_equal(a.audio, b.audio) && features_equal(a.image, b.image) && a.context == b.context &&
         a.speaker_id == b.speaker_id && a.utterance_index == b.utterance_index && a.label == b.label;
}

bool is_atomic_label(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  });
}

bool DatasetSpec::has_label(std::string_view label) const {
  return std::find(answer_set.begin(), answer_set.end(), label) != answer_set.end();
}

// --- registry --------------------------------------------------------------------

DatasetRegistry::DatasetRegistry(std::vector<DatasetSpec> datasets) : datasets_(std::move(datasets)) {
  std::set<std::string> ids;
  std::size_t acoustic = 0, visual = 0;
  for (const DatasetSpec& d : datasets_) {
    const std::string where = "dataset '" + d.id + "': ";
    if (d.id.empty() || !is_atomic_label(d.id)) throw ConfigError("dataset ids must be word tokens, got '" + d.id + "'");
    if (!ids.insert(d.id).second) throw ConfigError("duplicate dataset id '" + d.id + "'");
    if (d.is_regression()) {
      if (!d.answer_set.empty()) throw ConfigError(where + "MSA datasets take scalar labels, not an answer set");
    } else {
      if (d.answer_set.empty()) throw ConfigError(where + "answer set is empty");
      std::set<std::string> seen;
      for (const std::string& l : d.answer_set) {
        if (!is_atomic_label(l)) throw ConfigError(where + "label '" + l + "' is not a single word token");
        if (!seen.insert(l).second) throw ConfigError(where + "duplicate label '" + l + "'");
      }
    }
    if (d.neutral_label && !d.has_label(*d.neutral_label)) {
      throw ConfigError(where + "neutral label '" + *d.neutral_label + "' is not in the answer set");
    }
    for (const std::string& m : d.metrics) {
      if (std::find(kKnownMetrics.begin(), kKnownMetrics.end(), m) == kKnownMetrics.end()) {
        throw ConfigError(where + "unknown metric '" + m + "'");
      }
      const bool regression_metric = m == "MAE" || m == "ACC7" || m == "ACC2";
      if (regression_metric != d.is_regression()) throw ConfigError(where + "metric '" + m + "' does not fit the task");
      if (m == "MF1" && !d.neutral_label) throw ConfigError(where + "MF1 needs a neutral_label");
    }
    if (d.acoustic_dim) {
      if (acoustic && acoustic != d.acoustic_dim) throw ConfigError(where + "acoustic_dim differs from other datasets");
      acoustic = d.acoustic_dim;
    }
    if (d.visual_dim) {
      if (visual && visual != d.visual_dim) throw ConfigError(where + "visual_dim differs from other datasets");
      visual = d.visual_dim;
    }
  }
}

DatasetRegistry DatasetRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open registry " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("registry " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

DatasetRegistry DatasetRegistry::from_json(const json& j) {
  try {
    std::vector<DatasetSpec> out;
    for (const json& d : j.at("datasets")) {
      DatasetSpec s;
      s.id = d.at("id").get<std::string>();
      try {
        s.task_type = parse_task_type(d.at("task_type").get<std::string>());
      } catch (const DataError& e) {
        throw ConfigError(e.what());
      }
      if (d.contains("answer_set")) s.answer_set = d.at("answer_set").get<std::vector<std::string>>();
      s.acoustic_dim = d.value("acoustic_dim", std::size_t{0});
      s.visual_dim = d.value("visual_dim", std::size_t{0});
      if (d.contains("metrics")) s.metrics = d.at("metrics").get<std::vector<std::string>>();
      if (d.contains("neutral_label") && !d.at("neutral_label").is_null()) {
        s.neutral_label = d.at("neutral_label").get<std::string>();
      }
      if (d.contains("polarity")) {
        for (const auto& [label, pol] : d.at("polarity").items()) {
          s.polarity_overrides[label] = parse_polarity(pol.get<std::string>());
        }
      }
      out.push_back(std::move(s));
    }
    return DatasetRegistry(std::move(out));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed registry: ") + e.what());
  }
}

json DatasetRegistry::to_json() const {
  json arr = json::array();
  for (const DatasetSpec& d : datasets_) {
    json o;
    o["id"] = d.id;
    o["task_type"] = std::string(to_string(d.task_type));
    if (!d.is_regression()) o["answer_set"] = d.answer_set;
    o["acoustic_dim"] = d.acoustic_dim;
    o["visual_dim"] = d.visual_dim;
    o["metrics"] = d.metrics;
    if (d.neutral_label) o["neutral_label"] = *d.neutral_label;
    if (!d.polarity_overrides.empty()) {
      json p = json::object();
      for (const auto& [label, pol] : d.polarity_overrides) p[label] = std::string(to_string(pol));
      o["polarity"] = p;
    }
    arr.push_back(std::move(o));
  }
  return json{{"datasets", arr}};
}

const DatasetSpec* DatasetRegistry::find(std::string_view id) const {
  for (const DatasetSpec& d : datasets_) {
    if (d.id == id) return &d;
  }
  return nullptr;
}

const DatasetSpec& DatasetRegistry::at(std::string_view id) const {
  if (const DatasetSpec* d = find(id)) return *d;
  throw DataError("unknown dataset_id '" + std::string(id) + "'");
}

std::size_t DatasetRegistry::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < datasets_.size(); ++i) {
    if (datasets_[i].id == id) return i;
  }
  throw DataError("unknown dataset_id '" + std::string(id) + "'");
}

std::size_t DatasetRegistry::acoustic_dim() const {
  for (const DatasetSpec& d : datasets_)
    if (d.acoustic_dim) return d.acoustic_dim;
  return 0;
}

std::size_t DatasetRegistry::visual_dim() const {
  for (const DatasetSpec& d : datasets_)
    if (d.visual_dim) return d.visual_dim;
  return 0;
}

// --- records ----------------------------------------------------------------------

void validate_record(const SaevalRecord& r, const DatasetRegistry& registry) {
  const DatasetSpec& ds = registry.at(r.dataset_id);
  if (r.task_type != ds.task_type) {
    throw DataError("task_type " + std::string(to_string(r.task_type)) + " does not match dataset '" + ds.id +
                    "' (" + std::string(to_string(ds.task_type)) + ")");
  }
  if (r.text.empty()) throw DataError("text is empty");
  if (has_control_chars(r.text)) throw DataError("text contains control characters");
  const bool erc = r.task_type == TaskType::ERC;
  if (erc) {
    if (!r.utterance_index) throw DataError("ERC record is missing utterance_index");
    if (!r.speaker_id) throw DataError("ERC record is missing speaker_id");
    for (const ContextTurn& t : r.context) {
      if (t.text.empty() || has_control_chars(t.text)) throw DataError("context utterance text is empty or has control characters");
    }
  } else if (!r.context.empty() || r.speaker_id || r.utterance_index) {
    throw DataError("context/speaker_id/utterance_index are only allowed on ERC records");
  }
  auto check_features = [&](const FeaturePtr& f, std::size_t dim, const char* name) {
    if (!f) return;
    if (dim == 0) throw DataError(std::string("dataset '") + ds.id + "' declares no " + name + " modality");
    if (f->cols != dim) {
      throw DataError(std::string(name) + " feature dimension " + std::to_string(f->cols) + " != declared " + std::to_string(dim));
    }
    if (f->rows == 0 || f->values.size() != f->rows * f->cols) throw DataError(std::string(name) + " features are malformed");
    for (double v : f->values) {
      if (!std::isfinite(v)) throw DataError(std::string(name) + " features contain non-finite values");
    }
  };
  check_features(r.audio, ds.acoustic_dim, "audio");
  check_features(r.image, ds.visual_dim, "image");
  if (ds.is_regression()) {
    const double* v = std::get_if<double>(&r.label);
    if (!v) throw DataError("MSA dataset '" + ds.id + "' needs a scalar label");
    if (!std::isfinite(*v) || *v < -3.0 || *v > 3.0) throw DataError("MSA label " + label_to_string(r.label) + " outside [-3, 3]");
  } else {
    const std::string* s = std::get_if<std::string>(&r.label);
    if (!s) throw DataError("dataset '" + ds.id + "' needs a categorical label");
    if (!ds.has_label(*s)) throw DataError("label '" + *s + "' is not in the answer set of '" + ds.id + "'");
  }
}

SaevalRecord parse_record(const json& j, const DatasetRegistry& registry, const std::filesystem::path& base_dir,
                          const std::string& where) {
  static const std::set<std::string> kKeys = {"task_type", "dataset_id", "text",           "audio", "image",
                                              "context",   "speaker_id", "utterance_index", "label"};
  try {
    if (!j.is_object()) throw DataError("record is not a JSON object");
    for (const auto& [k, v] : j.items()) {
      if (!kKeys.count(k)) throw DataError("unexpected key '" + k + "'");
    }
    for (const std::string& k : kKeys) {
      if (!j.contains(k)) throw DataError("missing key '" + k + "'");
    }
    SaevalRecord r;
    r.task_type = parse_task_type(j.at("task_type").get<std::string>());
    r.dataset_id = j.at("dataset_id").get<std::string>();
    registry.at(r.dataset_id);
    r.text = j.at("text").get<std::string>();
    r.audio = parse_features(j.at("audio"), base_dir, "audio");
    r.image = parse_features(j.at("image"), base_dir, "image");
    if (const json& ctx = j.at("context"); !ctx.is_null()) {
      for (const json& turn : ctx) {
        if (!turn.is_array() || turn.size() != 2 || !turn[1].is_string()) {
          throw DataError("context entries must be [speaker_id, text] pairs");
        }
        r.context.push_back({speaker_from_json(turn[0]), turn[1].get<std::string>()});
      }
    }
    if (const json& s = j.at("speaker_id"); !s.is_null()) r.speaker_id = speaker_from_json(s);
    if (const json& u = j.at("utterance_index"); !u.is_null()) {
      if (!u.is_number_integer() || u.get<long long>() < 0) throw DataError("utterance_index must be a non-negative integer");
      r.utterance_index = u.get<std::size_t>();
    }
    const json& label = j.at("label");
    if (label.is_string()) {
      r.label = label.get<std::string>();
    } else if (label.is_number()) {
      r.label = label.get<double>();
    } else {
      throw DataError("label must be a string or a number");
    }
    validate_record(r, registry);
    return r;
  } catch (const json::exception& e) {
    throw DataError(where + ": malformed record: " + e.what());
  } catch (const Error& e) {
    throw DataError(where + ": " + e.what());
  }
}

std::vector<SaevalRecord> load_corpus(const std::filesystem::path& path, const DatasetRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path.string());
  const std::filesystem::path base = path.parent_path();
  std::vector<SaevalRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": malformed JSON: " + e.what());
    }
    out.push_back(parse_record(j, registry, base, where));
  }
  return out;
}

json record_to_json(const SaevalRecord& r) {
  json j;
  j["task_type"] = std::string(to_string(r.task_type));
  j["dataset_id"] = r.dataset_id;
  j["text"] = r.text;
  j["audio"] = features_to_json(r.audio);
  j["image"] = features_to_json(r.image);
  if (r.context.empty()) {
    j["context"] = r.task_type == TaskType::ERC ? json::array() : json(nullptr);
  } else {
    json ctx = json::array();
    for (const ContextTurn& t : r.context) ctx.push_back(json::array({t.speaker_id, t.text}));
    j["context"] = ctx;
  }
  j["speaker_id"] = r.speaker_id ? json(*r.speaker_id) : json(nullptr);
  j["utterance_index"] = r.utterance_index ? json(*r.utterance_index) : json(nullptr);
  if (const auto* s = std::get_if<std::string>(&r.label)) {
    j["label"] = *s;
  } else {
    j["label"] = std::get<double>(r.label);
  }
  return j;
}

void save_corpus(const std::filesystem::path& path, const std::vector<SaevalRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus " + path.string());
  for (const SaevalRecord& r : records) out << record_to_json(r).dump() << '\n';
}

// --- sidecars ---------------------------------------------------------------------

namespace {

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

FeatureMatrix read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open sidecar " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "SAEV", 4) != 0) {
    throw DataError("sidecar " + path.string() + " lacks the SAEV header");
  }
  FeatureMatrix m;
  m.rows = read_u32_le(bytes.data() + 4);
  m.cols = read_u32_le(bytes.data() + 8);
  if (m.rows == 0 || m.cols == 0 || bytes.size() != 12 + 4 * m.rows * m.cols) {
    throw DataError("sidecar " + path.string() + " has a size inconsistent with its header");
  }
  m.values.resize(m.rows * m.cols);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    m.values[i] = static_cast<double>(std::bit_cast<float>(read_u32_le(bytes.data() + 12 + 4 * i)));
  }
  return m;
}

void write_sidecar(const std::filesystem::path& path, const FeatureMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write sidecar " + path.string());
  out.write("SAEV", 4);
  write_u32_le(out, static_cast<std::uint32_t>(m.rows));
  write_u32_le(out, static_cast<std::uint32_t>(m.cols));
  for (double v : m.values) write_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

// --- polarity ---------------------------------------------------------------------

Polarity to_polarity(const LabelValue& label, const DatasetSpec& dataset) {
  if (const double* v = std::get_if<double>(&label)) {
    if (*v > 0.0) return Polarity::Positive;
    if (*v < 0.0) return Polarity::Negative;
    return Polarity::Neutral;
  }
  const std::string& s = std::get<std::string>(label);
  if (auto it = dataset.polarity_overrides.find(s); it != dataset.polarity_overrides.end()) return it->second;
  const auto& table = default_polarity_table();
  if (auto it = table.find(s); it != table.end()) return it->second;
  throw ConfigError("label '" + s + "' of dataset '" + dataset.id + "' has no polarity mapping");
}

Polarity to_polarity(const LabelValue& label, std::string_view dataset_id, const DatasetRegistry& registry) {
  return to_polarity(label, registry.at(dataset_id));
}

std::map<Polarity, DataPool> build_pools(const std::vector<SaevalRecord>& records, const DatasetRegistry& registry) {
  std::map<Polarity, DataPool> pools;
  for (Polarity p : kAllPolarities) pools[p].polarity = p;
  for (std::size_t i = 0; i < records.size(); ++i) {
    pools[to_polarity(records[i].label, records[i].dataset_id, registry)].members.push_back(i);
  }
  return pools;
}

namespace {

FeaturePtr concat_frames(const FeaturePtr& a, const FeaturePtr& b, const char* name) {
  if (!a) return b;
  if (!b) return a;
  if (a->cols != b->cols) {
    throw ContractError(std::string("combine_queries: ") + name + " widths differ (" + std::to_string(a->cols) +
                        " vs " + std::to_string(b->cols) + ")");
  }
  FeatureMatrix m = *a;
  m.rows += b->rows;
  m.values.insert(m.values.end(), b->values.begin(), b->values.end());
  return std::make_shared<FeatureMatrix>(std::move(m));
}

}  // namespace

SaevalRecord combine_queries(const SaevalRecord& a, const SaevalRecord& b, const DatasetRegistry& registry) {
  const Polarity pa = to_polarity(a.label, a.dataset_id, registry);
  const Polarity pb = to_polarity(b.label, b.dataset_id, registry);
  if (pa != pb) {
    throw ContractError("combine_queries: polarities differ (" + std::string(to_string(pa)) + " vs " +
                        std::string(to_string(pb)) + ")");
  }
  SaevalRecord out;
  out.task_type = a.task_type;
  out.dataset_id = a.dataset_id;
  out.text = a.text + std::string(kQuerySeparator) + b.text;
  out.audio = concat_frames(a.audio, b.audio, "audio");
  out.image = concat_frames(a.image, b.image, "image");
  if (a.task_type == TaskType::ERC) {
    out.context = a.context;
    if (b.task_type == TaskType::ERC) out.context.insert(out.context.end(), b.context.begin(), b.context.end());
    out.speaker_id = a.speaker_id;
    out.utterance_index = a.utterance_index;
  }
  out.label = std::string(to_string(pa));
  return out;
}

}  // namespace unisa
