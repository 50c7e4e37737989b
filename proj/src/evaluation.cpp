#include "unisa/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "unisa/error.hpp"
#include "unisa/model.hpp"

namespace unisa {

namespace {

template <typename T>
void check_lengths(std::span<const T> g, std::span<const T> p, const char* name) {
  if (g.size() != p.size()) {
    throw MetricError(std::string(name) + ": " + std::to_string(g.size()) + " golds vs " + std::to_string(p.size()) + " predictions");
  }
  if (g.empty()) throw MetricError(std::string(name) + ": no samples");
}

double f1_of(std::span<const std::string> golds, std::span<const std::string> preds, const std::string& c) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const bool g = golds[i] == c, p = preds[i] == c;
    tp += g && p;
    fp += !g && p;
    fn += g && !p;
  }
  const double den = 2 * tp + fp + fn;
  return den == 0 ? 0.0 : 2 * tp / den;
}

}  // namespace

double metric_wa(std::span<const std::string> golds, std::span<const std::string> preds) {
  check_lengths(golds, preds, "WA");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) hit += golds[i] == preds[i];
  return static_cast<double>(hit) / static_cast<double>(golds.size());
}

double metric_wf1(std::span<const std::string> golds, std::span<const std::string> preds) {
  check_lengths(golds, preds, "WF1");
  std::map<std::string, std::size_t> support;
  for (const auto& g : golds) ++support[g];
  double total = 0.0;
  for (const auto& [c, n] : support) total += static_cast<double>(n) * f1_of(golds, preds, c);
  return total / static_cast<double>(golds.size());
}

double metric_mf1_excl_neutral(std::span<const std::string> golds, std::span<const std::string> preds,
                               const std::string& neutral_label) {
  check_lengths(golds, preds, "MF1");
  std::set<std::string> classes(golds.begin(), golds.end());
  classes.erase(neutral_label);
  if (classes.empty()) throw MetricError("MF1: no non-neutral gold class; the metric is undefined");
  double total = 0.0;
  for (const auto& c : classes) total += f1_of(golds, preds, c);
  return total / static_cast<double>(classes.size());
}

MsaMetrics metrics_msa(std::span<const double> golds, std::span<const double> preds) {
  check_lengths(golds, preds, "MSA metrics");
  MsaMetrics m;
  std::size_t hit7 = 0, n2 = 0, hit2 = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    m.mae += std::abs(golds[i] - preds[i]);
    hit7 += score_bin(golds[i]) == score_bin(preds[i]);
    if (golds[i] != 0.0) {
      ++n2;
      hit2 += (golds[i] > 0.0) == (preds[i] > 0.0);
    }
  }
  const double n = static_cast<double>(golds.size());
  m.mae /= n;
  m.acc7 = static_cast<double>(hit7) / n;
  m.acc2 = n2 ? static_cast<double>(hit2) / static_cast<double>(n2) : std::numeric_limits<double>::quiet_NaN();
  return m;
}

nlohmann::json EvalResult::to_json() const {
  nlohmann::json j;
  j["dataset_id"] = dataset_id;
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [k, v] : metrics) m[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  j["metrics"] = m;
  j["samples"] = nlohmann::json::array();
  auto label_json = [](const LabelValue& l) {
    return is_scalar(l) ? nlohmann::json(std::get<double>(l)) : nlohmann::json(std::get<std::string>(l));
  };
  for (const auto& s : samples) {
    j["samples"].push_back({{"gold", label_json(s.gold)}, {"predicted", label_json(s.predicted)}, {"fallback", s.fallback}});
  }
  return j;
}

EvalResult score_dataset(const DatasetSpec& dataset, std::vector<SamplePrediction> samples) {
  EvalResult r;
  r.dataset_id = dataset.id;
  r.samples = std::move(samples);
  if (r.samples.empty()) return r;
  if (dataset.is_regression()) {
    std::vector<double> g, p;
    for (const auto& s : r.samples) {
      g.push_back(std::get<double>(s.gold));
      p.push_back(std::get<double>(s.predicted));
    }
    const MsaMetrics m = metrics_msa(g, p);
    for (const std::string& name : dataset.metrics) {
      if (name == "MAE") r.metrics[name] = m.mae;
      else if (name == "ACC7") r.metrics[name] = m.acc7;
      else if (name == "ACC2") r.metrics[name] = m.acc2;
    }
    return r;
  }
  std::vector<std::string> g, p;
  for (const auto& s : r.samples) {
    g.push_back(std::get<std::string>(s.gold));
    p.push_back(std::get<std::string>(s.predicted));
  }
  for (const std::string& name : dataset.metrics) {
    if (name == "WA") r.metrics[name] = metric_wa(g, p);
    else if (name == "WF1") r.metrics[name] = metric_wf1(g, p);
    else if (name == "MF1") r.metrics[name] = metric_mf1_excl_neutral(g, p, dataset.neutral_label.value_or("neutral"));
  }
  return r;
}

std::vector<EvalResult> evaluate(Model& model, std::span<const SaevalRecord> records, const Vocab& vocab,
                                 const DatasetRegistry& registry, std::size_t max_new) {
  std::vector<std::vector<SamplePrediction>> per(registry.datasets().size());
  for (const SaevalRecord& r : records) {
    const std::size_t d = registry.index_of(r.dataset_id);
    const AnswerSet answers = answer_set_for(registry.datasets()[d]);
    const auto generated = model.generate(build_prompt(r, vocab, registry, model.config().max_len), max_new);
    SamplePrediction s;
    s.gold = r.label;
    try {
      const DecodedLabel dl = decode_label(generated, answers, vocab);
      s.predicted = dl.label;
      s.fallback = dl.fallback;
    } catch (const DecodeError&) {
      // Nothing before <eos>: score as the neutral fallback of the answer type.
      s.predicted = answers.scalar ? LabelValue(0.0) : LabelValue(answers.labels.front());
      s.fallback = true;
    }
    per[d].push_back(std::move(s));
  }
  std::vector<EvalResult> out;
  for (std::size_t d = 0; d < per.size(); ++d) out.push_back(score_dataset(registry.datasets()[d], std::move(per[d])));
  return out;
}

std::string format_eval_table(std::span<const EvalResult> results) {
  std::vector<std::string> cols;
  for (const auto& r : results)
    for (const auto& [k, v] : r.metrics)
      if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
  std::size_t w0 = 7;
  for (const auto& r : results) w0 = std::max(w0, r.dataset_id.size());
  std::ostringstream out;
  char buf[64];
  out << std::string("Dataset") + std::string(w0 - 7, ' ');
  for (const auto& c : cols) {
    std::snprintf(buf, sizeof buf, "  %8s", c.c_str());
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "  %6s", "n");
  out << buf << '\n';
  for (const auto& r : results) {
    out << r.dataset_id << std::string(w0 - r.dataset_id.size(), ' ');
    for (const auto& c : cols) {
      const auto it = r.metrics.find(c);
      if (it == r.metrics.end()) std::snprintf(buf, sizeof buf, "  %8s", "-");
      else if (!std::isfinite(it->second)) std::snprintf(buf, sizeof buf, "  %8s", "n/a");
      // MAE prints raw; rates print as percentages.
      else if (c == "MAE") std::snprintf(buf, sizeof buf, "  %8.3f", it->second);
      else std::snprintf(buf, sizeof buf, "  %8.2f", 100.0 * it->second);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "  %6zu", r.samples.size());
    out << buf << '\n';
  }
  return out.str();
}

}  // namespace unisa
