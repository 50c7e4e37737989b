#include "unisa/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "unisa/error.hpp"
#include "unisa/log.hpp"

namespace unisa {

namespace {

constexpr std::uint64_t kTaskStreamBase = 100;
constexpr std::uint64_t kPolarityStreamBase = 200;
constexpr std::uint64_t kStepStreamBase = 1000;
constexpr std::uint64_t kOffsetStream = 300;
constexpr std::uint64_t kCheckpointVersion = 1;

std::uint64_t stage_index(Stage s) { return static_cast<std::uint64_t>(s); }

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Pretrain1: return "pretrain1";
    case Stage::Pretrain2: return "pretrain2";
    case Stage::Finetune: return "finetune";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  if (s == "pretrain1") return Stage::Pretrain1;
  if (s == "pretrain2") return Stage::Pretrain2;
  if (s == "finetune") return Stage::Finetune;
  throw ConfigError("unknown stage '" + std::string(s) + "' (expected pretrain1, pretrain2 or finetune)");
}

// --- config ----------------------------------------------------------------------------

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
  };
  positive(learning_rate, "learning_rate");
  if (batch_size < 4) throw ConfigError("batch_size must be at least the number of tasks (4)");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (centroid_refresh_every == 0) throw ConfigError("centroid_refresh_every must be positive");
  if (!(p_mask >= 0.0 && p_mask <= 1.0)) throw ConfigError("p_mask must lie in [0, 1]");
  if (!(grad_clip >= 0.0) || !std::isfinite(grad_clip)) throw ConfigError("grad_clip must be non-negative");
  if (max_new_tokens == 0) throw ConfigError("max_new_tokens must be positive");
  for (double w : {loss_weights.mcm, loss_weights.spp, loss_weights.ccl, loss_weights.cep}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be non-negative");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"stage", std::string(to_string(stage))},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"dropout_rate", dropout_rate},
          {"epochs", epochs},
          {"max_steps", max_steps},
          {"max_len", max_len},
          {"seed", seed},
          {"centroid_refresh_every", centroid_refresh_every},
          {"loss_weights", {{"mcm", loss_weights.mcm}, {"spp", loss_weights.spp}, {"ccl", loss_weights.ccl}, {"cep", loss_weights.cep}}},
          {"p_mask", p_mask},
          {"modal_mask", modal_mask},
          {"grad_clip", grad_clip},
          {"checkpoint_every", checkpoint_every},
          {"validate_every_epochs", validate_every_epochs},
          {"max_new_tokens", max_new_tokens}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  static const std::set<std::string> known = {"stage", "learning_rate", "batch_size", "dropout_rate", "epochs",
                                              "max_steps", "max_len", "seed", "centroid_refresh_every",
                                              "loss_weights", "p_mask", "modal_mask", "grad_clip",
                                              "checkpoint_every", "validate_every_epochs", "max_new_tokens"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown training config key '" + k + "'");
  }
  try {
    if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
    read_key(j, "learning_rate", c.learning_rate);
    read_key(j, "batch_size", c.batch_size);
    read_key(j, "dropout_rate", c.dropout_rate);
    read_key(j, "epochs", c.epochs);
    read_key(j, "max_steps", c.max_steps);
    read_key(j, "max_len", c.max_len);
    read_key(j, "seed", c.seed);
    read_key(j, "centroid_refresh_every", c.centroid_refresh_every);
    read_key(j, "p_mask", c.p_mask);
    read_key(j, "modal_mask", c.modal_mask);
    read_key(j, "grad_clip", c.grad_clip);
    read_key(j, "checkpoint_every", c.checkpoint_every);
    read_key(j, "validate_every_epochs", c.validate_every_epochs);
    read_key(j, "max_new_tokens", c.max_new_tokens);
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      for (const auto& [k, v] : w.items()) {
        if (k != "mcm" && k != "spp" && k != "ccl" && k != "cep") throw ConfigError("unknown loss weight '" + k + "'");
      }
      read_key(w, "mcm", c.loss_weights.mcm);
      read_key(w, "spp", c.loss_weights.spp);
      read_key(w, "ccl", c.loss_weights.ccl);
      read_key(w, "cep", c.loss_weights.cep);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- optimizer ---------------------------------------------------------------------------

void Adam::step(std::span<Parameter* const> params) {
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const Parameter* p : params) {
      m_.push_back(Tensor::zeros_like(p->value));
      v_.push_back(Tensor::zeros_like(p->value));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    auto w = p.value.data();
    auto gr = p.grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1_ * m[k] + (1.0 - b1_) * gr[k];
      v[k] = b2_ * v[k] + (1.0 - b2_) * gr[k] * gr[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

void Adam::save(Checkpoint& ckpt, std::span<Parameter* const> params) const {
  ckpt.header["adam"] = {{"t", t_}, {"lr", lr_}, {"beta1", b1_}, {"beta2", b2_}, {"eps", eps_}};
  if (m_.size() != params.size()) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.arrays.emplace_back("adam.m/" + params[i]->name, m_[i]);
    ckpt.arrays.emplace_back("adam.v/" + params[i]->name, v_[i]);
  }
}

void Adam::load(const Checkpoint& ckpt, std::span<Parameter* const> params) {
  if (!ckpt.header.contains("adam")) throw CheckpointError("checkpoint has no optimizer state");
  t_ = ckpt.header.at("adam").at("t").get<std::uint64_t>();
  m_.clear();
  v_.clear();
  if (t_ == 0) return;
  for (const Parameter* p : params) {
    const Tensor* m = ckpt.find("adam.m/" + p->name);
    const Tensor* v = ckpt.find("adam.v/" + p->name);
    if (!m || !v) throw CheckpointError("checkpoint lacks optimizer moments for " + p->name);
    if (m->shape() != p->value.shape() || v->shape() != p->value.shape()) {
      throw CheckpointError("optimizer moment shape mismatch for " + p->name);
    }
    m_.push_back(*m);
    v_.push_back(*v);
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (Parameter* p : params)
      for (double& g : p->grad.data()) g *= s;
  }
  return norm;
}

// --- sampling ------------------------------------------------------------------------------

ShuffledPool::ShuffledPool(std::vector<std::size_t> members, std::uint64_t seed, std::uint64_t stream)
    : members_(std::move(members)), seed_(seed), stream_(stream) {
  if (!members_.empty()) reshuffle();
}

void ShuffledPool::reshuffle() {
  order_ = members_;
  auto rng = stream_rng(seed_, epoch_, stream_);
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng() % i]);
  cursor_ = 0;
}

std::size_t ShuffledPool::next() {
  if (members_.empty()) throw ConfigError("cannot draw from an empty pool");
  if (cursor_ == order_.size()) {
    ++epoch_;
    reshuffle();
  }
  return order_[cursor_++];
}

nlohmann::json ShuffledPool::state() const { return {{"epoch", epoch_}, {"cursor", cursor_}}; }

void ShuffledPool::restore(const nlohmann::json& j) {
  epoch_ = j.at("epoch").get<std::uint64_t>();
  if (!members_.empty()) reshuffle();
  const auto c = j.at("cursor").get<std::size_t>();
  if (c > order_.size()) throw CheckpointError("pool cursor beyond pool length");
  cursor_ = c;
}

namespace {

std::array<std::vector<std::size_t>, 4> group_by_task(const std::vector<SaevalRecord>& records) {
  std::array<std::vector<std::size_t>, 4> g;
  for (std::size_t i = 0; i < records.size(); ++i) g[static_cast<std::size_t>(records[i].task_type)].push_back(i);
  return g;
}

}  // namespace

TaskPools::TaskPools(const std::vector<SaevalRecord>& records, std::uint64_t seed)
    : TaskPools(group_by_task(records), seed) {}

TaskPools::TaskPools(std::array<std::vector<std::size_t>, 4> members, std::uint64_t seed) {
  for (TaskType t : kAllTasks) {
    const auto k = static_cast<std::size_t>(t);
    if (members[k].empty()) throw ConfigError("task pool " + std::string(to_string(t)) + " is empty");
    pools_[k] = ShuffledPool(std::move(members[k]), seed, kTaskStreamBase + k);
  }
  offset_ = stream_rng(seed, 0, kOffsetStream)() % 4;
}

nlohmann::json TaskPools::state() const {
  nlohmann::json j = {{"offset", offset_}, {"pools", nlohmann::json::array()}};
  for (const auto& p : pools_) j["pools"].push_back(p.state());
  return j;
}

void TaskPools::restore(const nlohmann::json& j) {
  offset_ = j.at("offset").get<std::size_t>();
  const auto& ps = j.at("pools");
  if (ps.size() != pools_.size()) throw CheckpointError("sampler state has the wrong number of pools");
  for (std::size_t k = 0; k < pools_.size(); ++k) pools_[k].restore(ps[k]);
}

std::array<std::size_t, 4> task_counts(std::size_t batch_size, std::size_t offset) {
  std::array<std::size_t, 4> c;
  c.fill(batch_size / 4);
  for (std::size_t r = 0; r < batch_size % 4; ++r) ++c[(offset + r) % 4];
  return c;
}

std::vector<std::size_t> task_average_sample(TaskPools& pools, std::size_t batch_size) {
  if (batch_size < 4) throw ConfigError("batch_size " + std::to_string(batch_size) + " is below the number of tasks");
  const auto counts = task_counts(batch_size, pools.offset_);
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t n = 0; n < counts[k]; ++n) out.push_back(pools.pools_[k].next());
  pools.offset_ = (pools.offset_ + batch_size % 4) % 4;
  return out;
}

// --- items ---------------------------------------------------------------------------------

PretrainItem make_pretrain_item(const SaevalRecord& record, Polarity polarity, const Vocab& vocab,
                                const DatasetRegistry& registry, const TrainConfig& config, std::mt19937_64& rng) {
  PretrainItem it;
  it.task = record.task_type;
  it.polarity = polarity;
  it.prompt = build_prompt(record, vocab, registry, config.max_len);
  const ModalitySetting s = config.modal_mask ? sample_modal_setting(record, rng)
                                              : (available_settings(record.audio != nullptr, record.image != nullptr).back());
  it.prompt = apply_modal_setting(std::move(it.prompt), s);
  it.plan = sample_mcm_plan(it.prompt, config.p_mask, rng);
  it.plan.setting = s;
  return it;
}

FinetuneItem make_finetune_item(const SaevalRecord& record, const Vocab& vocab, const DatasetRegistry& registry,
                                const TrainConfig& config, std::mt19937_64& rng) {
  FinetuneItem it;
  it.prompt = build_prompt(record, vocab, registry, config.max_len);
  if (config.modal_mask) it.prompt = apply_modal_setting(std::move(it.prompt), sample_modal_setting(record, rng));
  it.target = vocab.tokenize(render_label(record.label));
  return it;
}

// --- loop ------------------------------------------------------------------------------------

nlohmann::json StepLog::to_json() const {
  return {{"step", step},       {"stage", std::string(to_string(stage))},
          {"mcm", loss.mcm},    {"spp", loss.spp},
          {"ccl", loss.ccl},    {"cep", loss.cep},
          {"gen", loss.gen},    {"total", loss.total},
          {"lr", lr}};
}

std::size_t total_steps(const TrainConfig& config, std::size_t corpus_size) {
  if (config.max_steps) return config.max_steps;
  const std::size_t per_epoch = (corpus_size + config.batch_size - 1) / config.batch_size;
  return per_epoch * config.epochs;
}

ModelConfig model_config_for(const Vocab& vocab, const DatasetRegistry& registry, const nlohmann::json& overrides) {
  nlohmann::json j = ModelConfig{}.to_json();
  for (const auto& [k, v] : overrides.items()) j[k] = v;
  j["vocab_size"] = vocab.size();
  j["num_datasets"] = registry.size();
  j["acoustic_dim"] = registry.acoustic_dim();
  j["visual_dim"] = registry.visual_dim();
  ModelConfig c = ModelConfig::from_json(j);
  c.validate();
  return c;
}

Vocab vocab_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.header.contains("vocab")) throw CheckpointError("checkpoint header has no vocabulary");
  return Vocab::from_tokens(ckpt.header.at("vocab").get<std::vector<std::string>>());
}

DatasetRegistry registry_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.header.contains("registry")) throw CheckpointError("checkpoint header has no dataset registry");
  return DatasetRegistry::from_json(ckpt.header.at("registry"));
}

namespace {

class Trainer {
 public:
  Trainer(const TrainInputs& in, const TrainConfig& cfg, Model model)
      : in_(in),
        cfg_(cfg),
        records_(*in.corpus),
        registry_(*in.registry),
        vocab_(*in.vocab),
        model_(std::move(model)),
        adam_(cfg.learning_rate),
        tasks_(records_, cfg.seed) {
    params_ = model_.parameters();
    ctx_.vocab = &vocab_;
    ctx_.spaces = CepLabelSpaces::from_registry(registry_);
    ctx_.weights = cfg.loss_weights;
    ctx_.dropout_rate = cfg.dropout_rate;
    if (cfg.stage == Stage::Pretrain1) {
      for (const auto& [p, pool] : build_pools(records_, registry_)) {
        polarity_pools_[static_cast<std::size_t>(p)] =
            ShuffledPool(pool.members, cfg.seed, kPolarityStreamBase + static_cast<std::size_t>(p));
      }
      polarity_.reserve(records_.size());
      for (const auto& r : records_) polarity_.push_back(to_polarity(r.label, r.dataset_id, registry_));
    }
    steps_ = total_steps(cfg, records_.size());
    steps_per_epoch_ = (records_.size() + cfg.batch_size - 1) / cfg.batch_size;
  }

  void resume(const Checkpoint& ckpt) {
    if (!ckpt.header.contains("train")) throw CheckpointError("checkpoint carries no training state");
    const auto& t = ckpt.header.at("train");
    if (parse_stage(t.at("stage").get<std::string>()) != cfg_.stage) {
      throw ConfigError("checkpoint was written by stage " + t.at("stage").get<std::string>() + ", not " +
                        std::string(to_string(cfg_.stage)));
    }
    if (t.at("corpus_size").get<std::size_t>() != records_.size()) {
      throw ConfigError("checkpoint was written for a corpus of a different size");
    }
    load_parameters(model_, ckpt);
    adam_.load(ckpt, params_);
    step_ = t.at("step").get<std::size_t>();
    tasks_.restore(t.at("sampler").at("tasks"));
    if (cfg_.stage == Stage::Pretrain1) {
      const auto& ps = t.at("sampler").at("polarity");
      for (std::size_t k = 0; k < 3; ++k) polarity_pools_[k].restore(ps[k]);
    }
    if (cfg_.stage == Stage::Pretrain2) {
      centroids_ = CentroidIndex::from_json(t.at("centroids"));
      pseudo_ = t.at("pseudo").get<std::vector<PseudoLabelSet>>();
    }
  }

  TrainResult run() {
    TrainResult res{model_, {}, {}, {}};
    open_logs();
    for (; step_ < steps_; ++step_) {
      StepLog log = train_step();
      if (metrics_) *metrics_ << log.to_json().dump() << '\n' << std::flush;
      res.log.push_back(std::move(log));
      const std::size_t done = step_ + 1;
      if (cfg_.stage == Stage::Finetune && cfg_.validate_every_epochs && steps_per_epoch_ &&
          done % steps_per_epoch_ == 0 && (done / steps_per_epoch_) % cfg_.validate_every_epochs == 0) {
        res.validation.push_back(validate(done / steps_per_epoch_, done));
      }
      if (cfg_.checkpoint_every && done % cfg_.checkpoint_every == 0 && done < steps_ && in_.out_dir) {
        write_checkpoint(*in_.out_dir / ("checkpoint_step" + std::to_string(done) + ".ckpt"), snapshot(done));
      }
    }
    res.checkpoint = snapshot(steps_);
    if (in_.out_dir) write_checkpoint(*in_.out_dir / "checkpoint.ckpt", res.checkpoint);
    res.model = model_;
    return res;
  }

 private:
  void open_logs() {
    if (!in_.out_dir) return;
    std::filesystem::create_directories(*in_.out_dir);
    const auto path = *in_.out_dir / "metrics.jsonl";
    std::vector<std::string> kept;
    if (step_ > 0) {
      // Resuming: keep what was logged before the restart point.
      std::ifstream old(path);
      std::string line;
      while (std::getline(old, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.value("step", steps_) < step_) kept.push_back(line);
      }
    }
    metrics_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
    if (!*metrics_) throw ConfigError("cannot write " + path.string());
    for (const auto& l : kept) *metrics_ << l << '\n';
    if (cfg_.stage == Stage::Finetune) {
      const auto vpath = *in_.out_dir / "validation.jsonl";
      std::vector<std::string> vkept;
      if (step_ > 0) {
        std::ifstream old(vpath);
        std::string line;
        while (std::getline(old, line)) {
          const auto j = nlohmann::json::parse(line, nullptr, false);
          if (!j.is_discarded() && j.value("step", steps_ + 1) <= step_) vkept.push_back(line);
        }
      }
      validation_ = std::make_unique<std::ofstream>(vpath, std::ios::trunc);
      for (const auto& l : vkept) *validation_ << l << '\n';
    }
  }

  void check_finite(const LossReport& r) const {
    for (double v : {r.mcm, r.spp, r.ccl, r.cep, r.gen, r.total}) {
      if (!std::isfinite(v)) {
        std::ostringstream m;
        m << "non-finite loss at step " << step_ << " (" << to_string(cfg_.stage) << "): mcm=" << r.mcm
          << " spp=" << r.spp << " ccl=" << r.ccl << " cep=" << r.cep << " gen=" << r.gen << " total=" << r.total;
        throw NumericError(m.str());
      }
    }
  }

  StepLog train_step() {
    auto rng = stream_rng(cfg_.seed, step_, kStepStreamBase + stage_index(cfg_.stage));
    if (cfg_.stage == Stage::Pretrain2 && step_ % cfg_.centroid_refresh_every == 0) refresh_centroids();
    const std::vector<std::size_t> idx = task_average_sample(tasks_, cfg_.batch_size);
    ctx_.seed = rng();
    for (Parameter* p : params_) p->zero_grad();
    Graph g(true);
    StepLog log;
    log.step = step_;
    log.stage = cfg_.stage;
    log.lr = cfg_.learning_rate;
    Var total;
    if (cfg_.stage == Stage::Finetune) {
      std::vector<FinetuneItem> batch;
      for (std::size_t i : idx) batch.push_back(make_finetune_item(records_[i], vocab_, registry_, cfg_, rng));
      total = loss_generation(g, model_, batch, ctx_);
      log.loss.gen = log.loss.total = total.value().item();
    } else {
      std::vector<PretrainItem> batch;
      for (std::size_t i : idx) batch.push_back(pretrain_item(i, rng));
      StageLoss sl = cfg_.stage == Stage::Pretrain1 ? stage1_loss(g, model_, batch, ctx_)
                                                    : stage2_loss(g, model_, batch, ctx_, centroids_);
      total = sl.total;
      log.loss = sl.report;
    }
    check_finite(log.loss);
    g.backward(total);
    clip_grad_norm(params_, cfg_.grad_clip);
    adam_.step(params_);
    return log;
  }

  PretrainItem pretrain_item(std::size_t i, std::mt19937_64& rng) {
    const SaevalRecord& a = records_[i];
    if (cfg_.stage == Stage::Pretrain1) {
      const Polarity p = polarity_[i];
      ShuffledPool& pool = polarity_pools_[static_cast<std::size_t>(p)];
      std::size_t b = pool.next();
      if (b == i && pool.size() > 1) b = pool.next();
      return make_pretrain_item(combine_queries(a, records_[b], registry_), p, vocab_, registry_, cfg_, rng);
    }
    PretrainItem it = make_pretrain_item(a, to_polarity(a.label, a.dataset_id, registry_), vocab_, registry_, cfg_, rng);
    it.pseudo = pseudo_[i];
    it.pseudo_revision = centroids_.revision;
    it.has_pseudo = true;
    return it;
  }

  void refresh_centroids() {
    std::vector<std::vector<double>> pooled;
    std::vector<TaskType> tasks;
    std::vector<std::string> labels;
    pooled.reserve(records_.size());
    for (const auto& r : records_) {
      pooled.push_back(pooled_representation(model_, build_prompt(r, vocab_, registry_, cfg_.max_len)));
      tasks.push_back(r.task_type);
      labels.push_back(cep_label(r.label));
    }
    centroids_ = build_centroids(pooled, tasks, labels, centroids_.revision + 1, &ctx_.spaces);
    if (!centroids_.complete()) throw ConfigError("stage-2 pre-training needs at least one record of every task");
    pseudo_.clear();
    for (std::size_t i = 0; i < records_.size(); ++i) {
      pseudo_.push_back(assign_pseudo_labels(pooled[i], centroids_, tasks[i], labels[i]));
    }
    log::info("centroids refreshed at step " + std::to_string(step_) + ", revision " +
              std::to_string(centroids_.revision));
  }

  nlohmann::json validate(std::size_t epoch, std::size_t step) {
    const auto& recs = in_.validation ? *in_.validation : records_;
    const auto results = evaluate(model_, recs, vocab_, registry_, cfg_.max_new_tokens);
    nlohmann::json j = {{"epoch", epoch}, {"step", step}, {"datasets", nlohmann::json::array()}};
    for (const auto& r : results) {
      nlohmann::json m = nlohmann::json::object();
      for (const auto& [k, v] : r.metrics) m[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
      j["datasets"].push_back({{"dataset_id", r.dataset_id}, {"n", r.samples.size()}, {"metrics", m}});
    }
    if (validation_) *validation_ << j.dump() << '\n' << std::flush;
    return j;
  }

  // State after `next_step` completed steps.
  Checkpoint snapshot(std::size_t next_step) const {
    Checkpoint c = model_checkpoint(model_);
    c.header["format_version"] = kCheckpointVersion;
    c.header["vocab"] = vocab_.tokens();
    c.header["registry"] = registry_.to_json();
    nlohmann::json t;
    t["stage"] = std::string(to_string(cfg_.stage));
    t["step"] = next_step;
    t["corpus_size"] = records_.size();
    t["config"] = cfg_.to_json();
    t["sampler"]["tasks"] = tasks_.state();
    if (cfg_.stage == Stage::Pretrain1) {
      t["sampler"]["polarity"] = nlohmann::json::array();
      for (const auto& p : polarity_pools_) t["sampler"]["polarity"].push_back(p.state());
    }
    if (cfg_.stage == Stage::Pretrain2) {
      t["centroids"] = centroids_.to_json();
      t["pseudo"] = pseudo_;
    }
    c.header["train"] = t;
    adam_.save(c, params_);
    return c;
  }

 private:
  const TrainInputs& in_;
  TrainConfig cfg_;
  const std::vector<SaevalRecord>& records_;
  const DatasetRegistry& registry_;
  const Vocab& vocab_;
  Model model_;
  std::vector<Parameter*> params_;
  Adam adam_;
  TaskPools tasks_;
  std::array<ShuffledPool, 3> polarity_pools_;
  std::vector<Polarity> polarity_;
  ObjectiveContext ctx_;
  CentroidIndex centroids_;
  std::vector<PseudoLabelSet> pseudo_;
  std::size_t step_ = 0, steps_ = 0, steps_per_epoch_ = 0;
  std::unique_ptr<std::ofstream> metrics_, validation_;
};

}  // namespace

TrainResult train(const TrainInputs& inputs, const TrainConfig& config, Model init, const Checkpoint* resume_from) {
  if (!inputs.corpus || !inputs.registry || !inputs.vocab) throw ContractError("train: corpus, registry and vocab are required");
  if (inputs.corpus->empty()) throw ConfigError("training corpus is empty");
  config.validate();
  if (init.config().vocab_size != inputs.vocab->size()) {
    throw ConfigError("model vocabulary size " + std::to_string(init.config().vocab_size) + " does not match vocabulary (" +
                      std::to_string(inputs.vocab->size()) + ")");
  }
  if (init.config().num_datasets != inputs.registry->size()) {
    throw ConfigError("model dataset count does not match the registry");
  }
  Trainer t(inputs, config, std::move(init));
  if (resume_from) t.resume(*resume_from);
  return t.run();
}

TrainResult run_pretrain_stage1(const TrainInputs& inputs, TrainConfig config, Model init) {
  config.stage = Stage::Pretrain1;
  return train(inputs, config, std::move(init));
}

TrainResult run_pretrain_stage2(const TrainInputs& inputs, TrainConfig config, Model init) {
  config.stage = Stage::Pretrain2;
  return train(inputs, config, std::move(init));
}

TrainResult run_finetune(const TrainInputs& inputs, TrainConfig config, Model init) {
  config.stage = Stage::Finetune;
  return train(inputs, config, std::move(init));
}

}  // namespace unisa
