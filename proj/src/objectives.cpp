#include "unisa/objectives.hpp"

#include <cmath>

#include "unisa/error.hpp"
#include "unisa/log.hpp"

namespace unisa {

namespace {

enum Pass : std::uint64_t { kPassMasked = 0, kPassClean = 1, kPassSpp = 2, kPassCep = 3, kPassGen = 4 };

Var batch_mean(Graph& g, const std::vector<Var>& terms, std::size_t batch_size) {
  if (terms.empty()) return g.constant(Tensor::scalar(0.0));
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return scale(total, 1.0 / static_cast<double>(batch_size));
}

void require_batch(std::span<const PretrainItem> batch) {
  if (batch.empty()) throw ContractError("empty batch");
}

const Vocab& vocab_of(const ObjectiveContext& ctx) {
  if (!ctx.vocab) throw ContractError("objective context has no vocabulary");
  return *ctx.vocab;
}

Var mcm_term(Graph& g, Model& model, const EncoderOutput& enc, const PretrainItem& item) {
  const auto flat = item.prompt.flatten();
  const auto& pos = item.plan.masked_token_positions;
  std::vector<std::size_t> targets;
  for (std::size_t p : pos) targets.push_back(static_cast<std::size_t>(flat.at(p)));
  return softmax_cross_entropy(model.output_logits(g, gather_rows(enc.states, pos)), targets, Reduction::Sum);
}

EncoderOutput encode_pass(Graph& g, Model& model, const PretrainItem& item, const ObjectiveContext& ctx, std::size_t i,
                          bool masked, std::mt19937_64& rng) {
  rng = stream_rng(ctx.seed, i, masked ? kPassMasked : kPassClean);
  EncodeOptions o;
  if (masked) o.mask_plan = &item.plan;
  o.dropout = {&rng, ctx.dropout_rate};
  return model.encode(g, item.prompt, o);
}

Var spp_term(Graph& g, Model& model, const EncoderOutput& enc, const PretrainItem& item, const ObjectiveContext& ctx,
             std::size_t i) {
  const Vocab& v = vocab_of(ctx);
  std::vector<int> cols;
  for (Polarity p : kAllPolarities) cols.push_back(v.id(to_string(p)));
  auto rng = stream_rng(ctx.seed, i, kPassSpp);
  const int in[] = {Vocab::kBos};
  const Var h = model.decode_hidden(g, enc, in, {&rng, ctx.dropout_rate});
  const std::size_t target[] = {static_cast<std::size_t>(item.polarity)};
  return softmax_cross_entropy(model.output_logits(g, h, cols), target, Reduction::Sum);
}

void check_pseudo(const PretrainItem& item, const CentroidIndex& centroids) {
  if (!item.has_pseudo) throw ContractError("sample has no pseudo labels; assign them from a centroid index first");
  if (item.pseudo_revision != centroids.revision) {
    throw ContractError("stale pseudo labels: assigned under centroid revision " + std::to_string(item.pseudo_revision) +
                        ", index is at " + std::to_string(centroids.revision));
  }
}

Var cep_term(Graph& g, Model& model, const EncoderOutput& enc, const PretrainItem& item, const ObjectiveContext& ctx,
             std::size_t i) {
  const Vocab& v = vocab_of(ctx);
  std::vector<int> in;
  for (TaskType t : kAllTasks) in.push_back(v.task_token(t));
  auto rng = stream_rng(ctx.seed, i, kPassCep);
  const Var h = model.decode_hidden(g, enc, in, {&rng, ctx.dropout_rate});
  Var total;
  for (TaskType t : kAllTasks) {
    const auto& space = ctx.spaces.of(t);
    if (space.empty()) throw ContractError("no cross-task label space for " + std::string(to_string(t)));
    std::vector<int> cols;
    for (const std::string& l : space) cols.push_back(v.id(l));
    const std::size_t row[] = {static_cast<std::size_t>(t)};
    const std::size_t target[] = {ctx.spaces.index_of(t, item.pseudo[static_cast<std::size_t>(t)])};
    const Var term = softmax_cross_entropy(model.output_logits(g, gather_rows(h, row), cols), target, Reduction::Sum);
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

LossReport finish(LossReport r, const LossWeights& w) {
  r.total = w.mcm * r.mcm + w.spp * r.spp + w.ccl * r.ccl + w.cep * r.cep;
  return r;
}

Var weighted(Var v, double w) { return w == 1.0 ? v : scale(v, w); }

std::vector<int> polarity_labels(std::span<const PretrainItem> batch) {
  std::vector<int> out;
  for (const PretrainItem& it : batch) out.push_back(static_cast<int>(it.polarity));
  return out;
}

}  // namespace

// --- label spaces and centroids --------------------------------------------------------

CepLabelSpaces CepLabelSpaces::from_registry(const DatasetRegistry& registry) {
  CepLabelSpaces s;
  for (const DatasetSpec& d : registry.datasets()) {
    auto& dst = s.labels[static_cast<std::size_t>(d.task_type)];
    const auto& src = d.is_regression() ? kScoreBinLabels : d.answer_set;
    for (const std::string& l : src) {
      if (std::find(dst.begin(), dst.end(), l) == dst.end()) dst.push_back(l);
    }
  }
  return s;
}

std::size_t CepLabelSpaces::index_of(TaskType t, const std::string& label) const {
  const auto& space = of(t);
  const auto it = std::find(space.begin(), space.end(), label);
  if (it == space.end()) {
    throw ContractError("label '" + label + "' is outside the " + std::string(to_string(t)) + " label space");
  }
  return static_cast<std::size_t>(it - space.begin());
}

std::string cep_label(const LabelValue& label) {
  if (const auto* s = std::get_if<std::string>(&label)) return *s;
  return score_bin_label(std::get<double>(label));
}

bool CentroidIndex::complete() const {
  return std::all_of(centroids.begin(), centroids.end(), [](const auto& m) { return !m.empty(); });
}

nlohmann::json CentroidIndex::to_json() const {
  nlohmann::json tasks = nlohmann::json::object();
  for (TaskType t : kAllTasks) tasks[std::string(to_string(t))] = of(t);
  return {{"revision", revision}, {"tasks", tasks}};
}

CentroidIndex CentroidIndex::from_json(const nlohmann::json& j) {
  CentroidIndex c;
  try {
    c.revision = j.at("revision").get<std::uint64_t>();
    for (TaskType t : kAllTasks) {
      const std::string key(to_string(t));
      if (j.at("tasks").contains(key)) {
        c.centroids[static_cast<std::size_t>(t)] =
            j.at("tasks").at(key).get<std::map<std::string, std::vector<double>>>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt centroid index: ") + e.what());
  }
  return c;
}

CentroidIndex build_centroids(std::span<const std::vector<double>> pooled, std::span<const TaskType> tasks,
                              std::span<const std::string> labels, std::uint64_t revision,
                              const CepLabelSpaces* expected) {
  if (pooled.size() != tasks.size() || pooled.size() != labels.size()) {
    throw DimensionError("build_centroids: " + std::to_string(pooled.size()) + " vectors, " +
                         std::to_string(tasks.size()) + " tasks, " + std::to_string(labels.size()) + " labels");
  }
  CentroidIndex index;
  index.revision = revision;
  std::array<std::map<std::string, std::size_t>, 4> counts;
  const std::size_t dim = pooled.empty() ? 0 : pooled[0].size();
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    if (pooled[i].size() != dim) throw DimensionError("build_centroids: inconsistent vector widths");
    const auto t = static_cast<std::size_t>(tasks[i]);
    auto [it, fresh] = index.centroids[t].try_emplace(labels[i], dim, 0.0);
    for (std::size_t c = 0; c < dim; ++c) it->second[c] += pooled[i][c];
    ++counts[t][labels[i]];
  }
  for (std::size_t t = 0; t < 4; ++t) {
    for (auto& [label, sum] : index.centroids[t]) {
      const double n = static_cast<double>(counts[t][label]);
      for (double& v : sum) v /= n;
    }
  }
  if (expected) {
    for (TaskType t : kAllTasks) {
      for (const std::string& l : expected->of(t)) {
        if (!index.of(t).count(l)) {
          log::warn("no samples carry label '" + l + "' for " + std::string(to_string(t)) + "; cluster excluded");
        }
      }
    }
  }
  return index;
}

const std::string& nearest_label(std::span<const double> vec, const std::map<std::string, std::vector<double>>& centroids) {
  if (centroids.empty()) throw ContractError("nearest_label: no centroids");
  const std::string* best = nullptr;
  double best_d = 0.0;
  for (const auto& [label, c] : centroids) {
    if (c.size() != vec.size()) {
      throw DimensionError("nearest_label: vector of width " + std::to_string(vec.size()) + " vs centroid of width " +
                           std::to_string(c.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) s += (vec[i] - c[i]) * (vec[i] - c[i]);
    const double d = std::sqrt(s);
    if (!best || d < best_d) {
      best = &label;
      best_d = d;
    }
  }
  return *best;
}

PseudoLabelSet assign_pseudo_labels(std::span<const double> pooled, const CentroidIndex& centroids, TaskType own_task,
                                    const std::string& gold) {
  PseudoLabelSet out;
  for (TaskType t : kAllTasks) {
    const auto i = static_cast<std::size_t>(t);
    if (t == own_task) {
      out[i] = gold;
    } else if (centroids.of(t).empty()) {
      throw ContractError("cannot assign a pseudo label for " + std::string(to_string(t)) + ": no centroids");
    } else {
      out[i] = nearest_label(pooled, centroids.of(t));
    }
  }
  return out;
}

// --- losses ----------------------------------------------------------------------------

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t sample, std::uint64_t pass) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(sample), static_cast<std::uint32_t>(sample >> 32),
                    static_cast<std::uint32_t>(pass)};
  return std::mt19937_64(seq);
}

Var loss_ccl(Var pooled, std::span<const int> labels) {
  const std::size_t b = pooled.rows();
  if (labels.size() != b) {
    throw DimensionError("loss_ccl: " + std::to_string(labels.size()) + " labels for " + std::to_string(b) + " rows");
  }
  Tensor same({b, b});
  for (std::size_t j = 0; j < b; ++j)
    for (std::size_t k = 0; k < b; ++k) same(j, k) = labels[j] == labels[k] ? 1.0 : 0.0;
  Graph& g = pooled.graph();
  const Var d = pairwise_distance(pooled);
  return sum(safe_div(row_sum(mul(d, g.constant(std::move(same)))), row_sum(d)));
}

double loss_ccl(const Tensor& pooled, std::span<const int> labels) {
  Graph g(false);
  return loss_ccl(g.constant(pooled), labels).value().item();
}

Var loss_mcm(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx) {
  require_batch(batch);
  std::vector<Var> terms;
  std::mt19937_64 rng;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].plan.masked_token_positions.empty()) continue;
    terms.push_back(mcm_term(g, model, encode_pass(g, model, batch[i], ctx, i, true, rng), batch[i]));
  }
  return batch_mean(g, terms, batch.size());
}

Var loss_spp(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx) {
  require_batch(batch);
  std::vector<Var> terms;
  std::mt19937_64 rng;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    terms.push_back(spp_term(g, model, encode_pass(g, model, batch[i], ctx, i, false, rng), batch[i], ctx, i));
  }
  return batch_mean(g, terms, batch.size());
}

Var loss_ccl(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx) {
  require_batch(batch);
  std::vector<Var> rows;
  std::mt19937_64 rng;
  for (std::size_t i = 0; i < batch.size(); ++i) rows.push_back(encode_pass(g, model, batch[i], ctx, i, false, rng).pooled);
  return loss_ccl(rows.size() == 1 ? rows[0] : concat_rows(rows), polarity_labels(batch));
}

Var loss_cep(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx,
             const CentroidIndex& centroids) {
  require_batch(batch);
  if (!centroids.complete()) throw ContractError("centroid index lacks clusters for some task");
  std::vector<Var> terms;
  std::mt19937_64 rng;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_pseudo(batch[i], centroids);
    terms.push_back(cep_term(g, model, encode_pass(g, model, batch[i], ctx, i, true, rng), batch[i], ctx, i));
  }
  return batch_mean(g, terms, batch.size());
}

Var loss_generation(Graph& g, Model& model, std::span<const FinetuneItem> batch, const ObjectiveContext& ctx) {
  if (batch.empty()) throw ContractError("empty batch");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const FinetuneItem& it = batch[i];
    if (it.target.empty()) throw ContractError("fine-tuning target is empty");
    auto enc_rng = stream_rng(ctx.seed, i, kPassClean);
    EncodeOptions o;
    o.dropout = {&enc_rng, ctx.dropout_rate};
    const EncoderOutput enc = model.encode(g, it.prompt, o);
    std::vector<int> in{Vocab::kBos};
    in.insert(in.end(), it.target.begin(), it.target.end());
    std::vector<std::size_t> targets(it.target.begin(), it.target.end());
    targets.push_back(Vocab::kEos);
    auto dec_rng = stream_rng(ctx.seed, i, kPassGen);
    const Var h = model.decode_hidden(g, enc, in, {&dec_rng, ctx.dropout_rate});
    terms.push_back(softmax_cross_entropy(model.output_logits(g, h), targets, Reduction::Sum));
  }
  return batch_mean(g, terms, batch.size());
}

StageLoss stage1_loss(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx) {
  require_batch(batch);
  std::vector<Var> mcm_terms, spp_terms, rows;
  std::mt19937_64 rng;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i].plan.masked_token_positions.empty()) {
      mcm_terms.push_back(mcm_term(g, model, encode_pass(g, model, batch[i], ctx, i, true, rng), batch[i]));
    }
    const EncoderOutput clean = encode_pass(g, model, batch[i], ctx, i, false, rng);
    spp_terms.push_back(spp_term(g, model, clean, batch[i], ctx, i));
    rows.push_back(clean.pooled);
  }
  const Var mcm = batch_mean(g, mcm_terms, batch.size());
  const Var spp = batch_mean(g, spp_terms, batch.size());
  const Var ccl = loss_ccl(rows.size() == 1 ? rows[0] : concat_rows(rows), polarity_labels(batch));
  const LossWeights& w = ctx.weights;
  StageLoss out;
  out.total = add(add(weighted(mcm, w.mcm), weighted(spp, w.spp)), weighted(ccl, w.ccl));
  LossReport r;
  r.mcm = mcm.value().item();
  r.spp = spp.value().item();
  r.ccl = ccl.value().item();
  out.report = finish(r, w);
  return out;
}

StageLoss stage2_loss(Graph& g, Model& model, std::span<const PretrainItem> batch, const ObjectiveContext& ctx,
                      const CentroidIndex& centroids) {
  require_batch(batch);
  if (!centroids.complete()) throw ContractError("centroid index lacks clusters for some task");
  std::vector<Var> mcm_terms, cep_terms;
  std::mt19937_64 rng;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_pseudo(batch[i], centroids);
    const EncoderOutput masked = encode_pass(g, model, batch[i], ctx, i, true, rng);
    if (!batch[i].plan.masked_token_positions.empty()) mcm_terms.push_back(mcm_term(g, model, masked, batch[i]));
    cep_terms.push_back(cep_term(g, model, masked, batch[i], ctx, i));
  }
  const Var mcm = batch_mean(g, mcm_terms, batch.size());
  const Var cep = batch_mean(g, cep_terms, batch.size());
  const LossWeights& w = ctx.weights;
  StageLoss out;
  out.total = add(weighted(mcm, w.mcm), weighted(cep, w.cep));
  LossReport r;
  r.mcm = mcm.value().item();
  r.cep = cep.value().item();
  out.report = finish(r, w);
  return out;
}

std::vector<double> pooled_representation(Model& model, const PromptSequence& prompt) {
  Graph g(false);
  const auto enc = model.encode(g, prompt);
  const auto d = enc.pooled.value().data();
  return {d.begin(), d.end()};
}

}  // namespace unisa
