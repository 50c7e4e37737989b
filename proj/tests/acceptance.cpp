// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "unisa/bias.hpp"
#include "unisa/error.hpp"
#include "unisa/evaluation.hpp"
#include "unisa/gradcheck.hpp"
#include "unisa/log.hpp"
#include "unisa/synthetic.hpp"
#include "unisa/training.hpp"

using namespace unisa;
using namespace unisa::testing;

namespace {

constexpr double kBiasTol = 0.01;
constexpr double kBiasRuntimeSec = 1.0;
constexpr double kGradTol = 1e-4;
constexpr int kGradSeeds = 20;
constexpr double kGradRuntimeSec = 120.0;
constexpr double kOverfitAccuracy = 0.95;
constexpr std::size_t kOverfitSteps = 500;
constexpr std::size_t kCurveSteps = 200;
constexpr std::size_t kCurveWindow = 50;
constexpr double kOverfitRuntimeSec = 300.0;
constexpr double kSettingFreqTol = 0.02;
constexpr double kMaskLo = 0.48, kMaskHi = 0.52;
constexpr double kCclScaleTol = 1e-9;
constexpr double kCclHandTol = 1e-6;
constexpr double kWf1Tol = 5e-5;

struct Outcome {
  bool ok = true;
  std::string detail;
  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Exhaustive nearest centroid with ascending-label scan and strict improvement.
std::string brute_nearest(const std::vector<double>& x, const std::map<std::string, std::vector<double>>& c) {
  std::vector<std::string> labels;
  for (const auto& [l, v] : c) labels.push_back(l);
  std::sort(labels.begin(), labels.end());
  std::string best;
  double bd = INFINITY;
  for (const auto& l : labels) {
    double d = 0;
    for (std::size_t k = 0; k < x.size(); ++k) d += (x[k] - c.at(l)[k]) * (x[k] - c.at(l)[k]);
    if (d < bd) {
      bd = d;
      best = l;
    }
  }
  return best;
}

// --- 1 ------------------------------------------------------------------------------------

Outcome bias_arithmetic() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const AccuracyMatrix m = AccuracyMatrix::load(std::filesystem::path(UNISA_DATA_DIR) / "subjective_bias_matrix.json");
  const BiasReport r = bias_report(m);
  const struct {
    const char* a;
    const char* b;
    double want;
  } expected[] = {{"IEMOCAP", "MELD", 20.01}, {"IEMOCAP", "EmoryNLP", 43.58}, {"IEMOCAP", "MOSI", 23.57},
                  {"MELD", "EmoryNLP", 19.1}, {"MELD", "MOSI", 10.47},       {"EmoryNLP", "MOSI", 8.93}};
  std::string got;
  for (const auto& e : expected) {
    const double v = r.sub[m.index_of(e.a)][m.index_of(e.b)];
    got += fmt("%.2f ", v);
    o.require(std::abs(v - e.want) <= kBiasTol, std::string(e.a) + "-" + e.b + " = " + fmt("%.4f", v));
  }
  const double dt = seconds_since(t0);
  o.require(dt < kBiasRuntimeSec, "runtime " + fmt("%.3f s", dt));
  if (o.ok) o.detail = "values " + got + "in " + fmt("%.3f s", dt);
  return o;
}

// --- 2 ------------------------------------------------------------------------------------

Outcome gradient_fidelity() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticOptions so;
  so.acoustic_dim = 4;
  so.visual_dim = 3;
  so.sizes = {3, 3, 3, 3};
  const SyntheticCorpus corpus = make_synthetic_corpus(so);
  const Vocab vocab = Vocab::build(corpus.records, corpus.registry);
  const CepLabelSpaces spaces = CepLabelSpaces::from_registry(corpus.registry);
  TrainConfig tc;
  tc.max_len = 64;

  const char* names[] = {"mcm", "spp", "ccl", "cep", "stage1", "stage2", "generation"};
  double worst[7] = {};
  for (int seed = 0; seed < kGradSeeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    ModelConfig mc = model_config_for(vocab, corpus.registry,
                                      {{"model_dim", 8}, {"text_embed_dim", 8}, {"heads", 2}, {"ffn_dim", 16},
                                       {"layers_enc", 1}, {"layers_dec", 1}, {"max_len", 64}, {"init_std", 0.4},
                                       {"init_seed", seed}});
    Model m(mc);
    // Random micro-batch of 2..4 records with random modal settings and masks.
    const std::size_t b = 2 + rng() % 3;
    std::vector<PretrainItem> items;
    std::vector<FinetuneItem> gen_items;
    std::vector<const SaevalRecord*> recs;
    for (std::size_t i = 0; i < b; ++i) {
      const SaevalRecord& r = corpus.records[rng() % corpus.records.size()];
      recs.push_back(&r);
      items.push_back(make_pretrain_item(r, to_polarity(r.label, r.dataset_id, corpus.registry), vocab, corpus.registry,
                                         tc, rng));
      gen_items.push_back(make_finetune_item(r, vocab, corpus.registry, tc, rng));
    }
    CentroidIndex c;
    c.revision = 1;
    for (TaskType t : kAllTasks) {
      for (const auto& l : spaces.of(t)) {
        std::vector<double> v(mc.model_dim);
        for (double& x : v) x = std::normal_distribution<double>(0.0, 1.0)(rng);
        c.centroids[static_cast<std::size_t>(t)][l] = v;
      }
    }
    for (std::size_t i = 0; i < b; ++i) {
      items[i].pseudo = assign_pseudo_labels(pooled_representation(m, items[i].prompt), c, recs[i]->task_type,
                                             cep_label(recs[i]->label));
      items[i].pseudo_revision = c.revision;
      items[i].has_pseudo = true;
    }
    ObjectiveContext ctx;
    ctx.vocab = &vocab;
    ctx.spaces = spaces;
    ctx.dropout_rate = 0.1;
    ctx.seed = static_cast<std::uint64_t>(seed);
    GradCheckOptions opt;
    opt.max_coords_per_param = 3;
    opt.seed = static_cast<std::uint64_t>(seed);
    const auto params = m.parameters();
    const std::function<Var(Graph&)> losses[] = {
        [&](Graph& g) { return loss_mcm(g, m, items, ctx); },
        [&](Graph& g) { return loss_spp(g, m, items, ctx); },
        [&](Graph& g) { return loss_ccl(g, m, items, ctx); },
        [&](Graph& g) { return loss_cep(g, m, items, ctx, c); },
        [&](Graph& g) { return stage1_loss(g, m, items, ctx).total; },
        [&](Graph& g) { return stage2_loss(g, m, items, ctx, c).total; },
        [&](Graph& g) { return loss_generation(g, m, gen_items, ctx); },
    };
    for (int k = 0; k < 7; ++k) {
      const double err = finite_diff_check(losses[k], params, opt);
      worst[k] = std::max(worst[k], err);
      o.require(err <= kGradTol, std::string(names[k]) + " seed " + std::to_string(seed) + " rel err " + fmt("%.3g", err));
    }
  }
  const double dt = seconds_since(t0);
  o.require(dt < kGradRuntimeSec, "runtime " + fmt("%.1f s", dt));
  if (o.ok) {
    double w = 0;
    for (double x : worst) w = std::max(w, x);
    o.detail = std::to_string(kGradSeeds) + " seeds x 7 losses, worst rel err " + fmt("%.2e", w) + ", " + fmt("%.1f s", dt);
  }
  return o;
}

// --- 3 ------------------------------------------------------------------------------------

Outcome overfit_sanity() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const SyntheticCorpus corpus = make_synthetic_corpus();
  const Vocab vocab = Vocab::build(corpus.records, corpus.registry);
  const ModelConfig mc = model_config_for(vocab, corpus.registry,
                                          {{"model_dim", 32}, {"text_embed_dim", 32}, {"heads", 2}, {"ffn_dim", 64},
                                           {"layers_enc", 1}, {"layers_dec", 1}, {"init_seed", 1}});
  const TrainInputs in{&corpus.records, &corpus.registry, &vocab, nullptr, {}};

  TrainConfig ft;
  ft.learning_rate = 3e-3;
  ft.batch_size = 16;
  ft.max_steps = kOverfitSteps;
  ft.validate_every_epochs = 0;
  const TrainResult r = run_finetune(in, ft, Model(mc));
  Model m = r.model;
  std::size_t hit = 0;
  for (const auto& rec : corpus.records) {
    const auto out = m.generate(build_prompt(rec, vocab, corpus.registry, ft.max_len), ft.max_new_tokens);
    try {
      const LabelValue pred = decode_label(out, answer_set_for(corpus.registry.at(rec.dataset_id)), vocab).label;
      hit += render_label(pred) == render_label(rec.label);
    } catch (const DecodeError&) {
    }
  }
  const double acc = static_cast<double>(hit) / static_cast<double>(corpus.records.size());
  o.require(acc >= kOverfitAccuracy, "train decode accuracy " + fmt("%.3f", acc));

  TrainConfig p1;
  p1.learning_rate = 1e-3;
  p1.batch_size = 16;
  p1.max_steps = kCurveSteps;
  const TrainResult s1 = run_pretrain_stage1(in, p1, Model(mc));
  std::vector<double> w(kCurveSteps / kCurveWindow, 0.0);
  for (std::size_t i = 0; i < kCurveSteps; ++i) w[i / kCurveWindow] += s1.log[i].loss.total / kCurveWindow;
  std::string ws;
  for (std::size_t k = 0; k < w.size(); ++k) {
    ws += fmt("%.3f ", w[k]);
    if (k) o.require(w[k] < w[k - 1], "stage-1 window averages not decreasing: " + ws);
  }
  const double dt = seconds_since(t0);
  o.require(dt < kOverfitRuntimeSec, "runtime " + fmt("%.1f s", dt));
  if (o.ok) o.detail = "accuracy " + fmt("%.3f", acc) + ", stage-1 windows " + ws + "in " + fmt("%.1f s", dt);
  return o;
}

// --- 4 ------------------------------------------------------------------------------------

Outcome modal_mask_contract() {
  Outcome o;
  const auto reg = small_registry();
  const SaevalRecord tav = msa_record(1.0, true, true);
  std::mt19937_64 rng(42);
  std::map<ModalitySetting, int> counts;
  for (int i = 0; i < 10000; ++i) ++counts[sample_modal_setting(tav, rng)];
  std::string freq;
  for (const auto& [s, n] : counts) {
    const double f = n / 10000.0;
    freq += std::string(to_string(s)) + "=" + fmt("%.4f ", f);
    o.require(std::abs(f - 0.25) <= kSettingFreqTol, "setting frequency " + freq);
  }
  o.require(counts.size() == 4, "expected exactly four settings");
  const SaevalRecord text_only = ca_record("fine", "positive");
  for (int i = 0; i < 1000; ++i) o.require(sample_modal_setting(text_only, rng) == ModalitySetting::T, "text-only record drew a non-T setting");

  SaevalRecord big = ca_record("", "positive");
  for (int i = 0; i < 10000; ++i) big.text += "good ";
  const Vocab v = Vocab::build({big}, reg);
  const PromptSequence p = build_prompt(big, v, reg, 20000);
  const auto eligible = eligible_token_positions(p);
  o.require(eligible.size() == 10000, "eligible token count " + std::to_string(eligible.size()));
  const MaskPlan plan = sample_mcm_plan(p, 0.5, rng);
  const double frac = static_cast<double>(plan.masked_token_positions.size()) / static_cast<double>(eligible.size());
  o.require(frac >= kMaskLo && frac <= kMaskHi, "masked fraction " + fmt("%.4f", frac));
  const std::set<std::size_t> ok(eligible.begin(), eligible.end());
  for (std::size_t pos : plan.masked_token_positions) {
    o.require(pos >= p.x_begin(), "a Z/Y position was masked");
    o.require(ok.count(pos) == 1, "an ineligible position was masked");
  }
  if (o.ok) o.detail = freq + "mask fraction " + fmt("%.4f", frac);
  return o;
}

// --- 5 ------------------------------------------------------------------------------------

Outcome task_average_sampling() {
  Outcome o;
  SyntheticOptions so;
  so.sizes = {7, 5, 9, 4};
  const SyntheticCorpus corpus = make_synthetic_corpus(so);
  for (std::size_t b : {std::size_t{64}, std::size_t{6}}) {
    TaskPools pools(corpus.records, 3);
    std::array<std::size_t, 4> total{};
    for (int step = 0; step < 1000; ++step) {
      std::array<std::size_t, 4> c{};
      for (std::size_t i : task_average_sample(pools, b)) ++c[static_cast<std::size_t>(corpus.records[i].task_type)];
      for (std::size_t t = 0; t < 4; ++t) total[t] += c[t];
      if (b == 64) o.require(c == std::array<std::size_t, 4>{16, 16, 16, 16}, "batch 64 step " + std::to_string(step));
      const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
      o.require(*hi - *lo <= 1, "batch " + std::to_string(b) + " per-step spread at step " + std::to_string(step));
    }
    const auto [lo, hi] = std::minmax_element(total.begin(), total.end());
    o.require(*hi - *lo <= 1, "batch " + std::to_string(b) + " cumulative spread " + std::to_string(*hi - *lo));
    if (b == 6 && o.ok) {
      o.detail = "batch 64 all 16s; batch 6 totals";
      for (auto t : total) o.detail += " " + std::to_string(t);
    }
  }
  return o;
}

// --- 6 ------------------------------------------------------------------------------------

Outcome ccl_properties() {
  Outcome o;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 1 + rng() % 8, d = 1 + rng() % 6;
    Tensor x({b, d});
    for (double& v : x.data()) v = n(rng);
    std::vector<int> labels(b);
    for (int& l : labels) l = static_cast<int>(rng() % 3);
    const double l0 = loss_ccl(x, labels);
    o.require(l0 >= 0.0 && l0 <= static_cast<double>(b), "out of [0, b]: " + fmt("%.6f", l0));
    Tensor y = x;
    const double s = 0.1 + 10.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    for (double& v : y.data()) v *= s;
    o.require(std::abs(loss_ccl(y, labels) - l0) <= kCclScaleTol, "scaling changed the loss");
    if (b >= 2) {
      const std::vector<int> same(b, 1);
      o.require(std::abs(loss_ccl(x, same) - static_cast<double>(b)) <= 1e-12, "all-same labels != b");
      std::vector<int> distinct(b);
      for (std::size_t i = 0; i < b; ++i) distinct[i] = static_cast<int>(i);
      o.require(loss_ccl(x, distinct) == 0.0, "all-distinct labels != 0");
    }
  }
  const int ppn[] = {0, 0, 1};
  const double hand = loss_ccl(Tensor::matrix(3, 1, {0.0, 1.0, 3.0}), ppn);
  // 0.5833 is the four-decimal rendering of 1/4 + 1/3.
  o.require(std::abs(hand - 7.0 / 12.0) <= kCclHandTol, "hand case " + fmt("%.8f", hand));
  o.require(fmt("%.4f", hand) == "0.5833", "hand case rounds to " + fmt("%.4f", hand));
  if (o.ok) o.detail = "1000 random batches; hand case " + fmt("%.6f", hand);
  return o;
}

// --- 7 ------------------------------------------------------------------------------------

Outcome pseudo_label_oracle() {
  Outcome o;
  std::mt19937_64 rng(7);
  auto coord = [&] { return static_cast<double>(static_cast<int>(rng() % 5) - 2); };
  int ties = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 10, dim = 1 + rng() % 8;
    CentroidIndex ci;
    std::array<std::map<std::string, std::vector<double>>, 4> per;
    for (std::size_t t = 0; t < 4; ++t) {
      const std::size_t k = 1 + rng() % 4;
      for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> v(dim);
        for (double& x : v) x = coord();
        per[t][std::string(1, static_cast<char>('a' + rng() % 6))] = v;
      }
      ci.centroids[t] = per[t];
    }
    std::vector<EmbeddingRow> src;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v(dim);
      for (double& x : v) x = coord();
      src.push_back({"S", std::to_string(i), std::string(1, static_cast<char>('a' + rng() % 6)), v});
    }
    for (std::size_t i = 0; i < n; ++i) {
      const TaskType own = kAllTasks[rng() % 4];
      const PseudoLabelSet got = assign_pseudo_labels(src[i].vector, ci, own, "gold");
      for (std::size_t t = 0; t < 4; ++t) {
        const std::string want = kAllTasks[t] == own ? "gold" : brute_nearest(src[i].vector, per[t]);
        o.require(got[t] == want, "assign_pseudo_labels mismatch in trial " + std::to_string(trial));
      }
    }
    const std::size_t tgt = rng() % 4;
    const CrossAnnotation ca = cross_annotate(src, "T", per[tgt]);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string want = brute_nearest(src[i].vector, per[tgt]);
      o.require(ca.pseudo[i] == want, "cross_annotate mismatch in trial " + std::to_string(trial));
      hit += want == src[i].label;
      // Count instances decided by a tie.
      std::size_t equal = 0;
      double best = INFINITY;
      for (const auto& [l, c] : per[tgt]) {
        double s = 0;
        for (std::size_t k = 0; k < dim; ++k) s += (src[i].vector[k] - c[k]) * (src[i].vector[k] - c[k]);
        if (s < best) {
          best = s;
          equal = 1;
        } else if (s == best) {
          ++equal;
        }
      }
      ties += equal > 1;
    }
    o.require(ca.accuracy == 100.0 * static_cast<double>(hit) / static_cast<double>(n), "accuracy mismatch");
  }
  if (o.ok) o.detail = "100 instances, " + std::to_string(ties) + " tie-decided assignments";
  return o;
}

// --- 8 ------------------------------------------------------------------------------------

Outcome metric_oracles() {
  Outcome o;
  using Strs = std::vector<std::string>;
  o.require(metric_wa(Strs{"a", "a", "b", "b"}, Strs{"a", "b", "b", "b"}) == 0.75, "WA fixture");
  const double wf1 = metric_wf1(Strs{"a", "a", "b"}, Strs{"a", "b", "b"});
  o.require(std::abs(wf1 - 0.6667) <= kWf1Tol, "WF1 worked case " + fmt("%.6f", wf1));
  o.require(wf1 == 2.0 / 3.0, "WF1 worked case not exact");
  const Strs g = {"a", "a", "b", "neutral"}, p = {"a", "neutral", "b", "b"};
  o.require(std::abs(metric_mf1_excl_neutral(g, p, "neutral") - 2.0 / 3.0) <= 1e-15, "MF1 fixture");
  const auto m = metrics_msa(std::vector<double>{1.0, -1.0, 0.0}, std::vector<double>{0.0, -1.0, 2.0});
  o.require(std::abs(m.mae - 1.0) <= 1e-15, "MAE fixture");
  o.require(std::abs(m.acc7 - 1.0 / 3.0) <= 1e-15, "ACC7 fixture");
  o.require(m.acc2 == 0.5, "ACC2 fixture");

  std::mt19937_64 rng(8);
  const char* labels[] = {"neutral", "joy", "anger", "sad"};
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 30;
    Strs gs(n), ps(n);
    for (std::size_t i = 0; i < n; ++i) {
      gs[i] = labels[rng() % 4];
      ps[i] = labels[rng() % 4];
    }
    std::map<std::string, double> tp, fp, fn, sup;
    double correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sup[gs[i]] += 1;
      if (gs[i] == ps[i]) {
        tp[gs[i]] += 1;
        correct += 1;
      } else {
        fn[gs[i]] += 1;
        fp[ps[i]] += 1;
      }
    }
    auto f1 = [&](const std::string& c) {
      const double pr = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
      const double rc = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
      return pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0.0;
    };
    double w = 0, mf = 0, k = 0;
    for (const auto& [c, s] : sup) {
      w += s / static_cast<double>(n) * f1(c);
      if (c != "neutral") {
        mf += f1(c);
        k += 1;
      }
    }
    o.require(std::abs(metric_wa(gs, ps) - correct / static_cast<double>(n)) <= 1e-12, "WA random");
    o.require(std::abs(metric_wf1(gs, ps) - w) <= 1e-12, "WF1 random");
    if (k > 0) o.require(std::abs(metric_mf1_excl_neutral(gs, ps, "neutral") - mf / k) <= 1e-12, "MF1 random");

    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = std::round(u(rng) * 2) / 2;
      b[i] = u(rng);
    }
    double mae = 0, c7 = 0, n2 = 0, c2 = 0;
    auto bin = [](double x) { return std::clamp(x < 0 ? -std::floor(-x + 0.5) : std::floor(x + 0.5), -3.0, 3.0); };
    for (std::size_t i = 0; i < n; ++i) {
      mae += std::abs(a[i] - b[i]);
      c7 += bin(a[i]) == bin(b[i]);
      if (a[i] != 0) {
        n2 += 1;
        c2 += (a[i] > 0) == (b[i] > 0);
      }
    }
    const auto r = metrics_msa(a, b);
    o.require(std::abs(r.mae - mae / static_cast<double>(n)) <= 1e-12, "MAE random");
    o.require(std::abs(r.acc7 - c7 / static_cast<double>(n)) <= 1e-12, "ACC7 random");
    if (n2 > 0) o.require(std::abs(r.acc2 - c2 / n2) <= 1e-12, "ACC2 random");
  }
  if (o.ok) o.detail = "fixtures exact, WF1 worked case " + fmt("%.4f", wf1) + ", 200 random instances";
  return o;
}

// --- 9 ------------------------------------------------------------------------------------

Outcome determinism_and_roundtrips() {
  Outcome o;
  const SyntheticCorpus corpus = make_synthetic_corpus();
  const Vocab vocab = Vocab::build(corpus.records, corpus.registry);
  const ModelConfig mc = model_config_for(vocab, corpus.registry,
                                          {{"model_dim", 16}, {"text_embed_dim", 16}, {"heads", 2}, {"ffn_dim", 32},
                                           {"layers_enc", 1}, {"layers_dec", 1}, {"init_seed", 9}});
  for (Stage st : {Stage::Pretrain1, Stage::Pretrain2, Stage::Finetune}) {
    TrainConfig tc;
    tc.stage = st;
    tc.learning_rate = 1e-3;
    tc.batch_size = 8;
    tc.max_steps = 4;
    tc.centroid_refresh_every = 2;
    tc.seed = 21;
    std::string ck[2], logs[2];
    for (int k = 0; k < 2; ++k) {
      TrainInputs in{&corpus.records, &corpus.registry, &vocab, nullptr, temp_dir("acc_det" + std::to_string(k))};
      train(in, tc, Model(mc));
      ck[k] = slurp(*in.out_dir / "checkpoint.ckpt");
      logs[k] = slurp(*in.out_dir / "metrics.jsonl");
    }
    o.require(!ck[0].empty() && ck[0] == ck[1], std::string(to_string(st)) + " checkpoints differ");
    o.require(!logs[0].empty() && logs[0] == logs[1], std::string(to_string(st)) + " metric logs differ");
  }

  const auto dir = temp_dir("acc_roundtrip");
  save_corpus(dir / "a.jsonl", corpus.records);
  const auto loaded = load_corpus(dir / "a.jsonl", corpus.registry);
  o.require(loaded == corpus.records, "corpus load/serialize/load is not the identity");
  save_corpus(dir / "b.jsonl", loaded);
  o.require(load_corpus(dir / "b.jsonl", corpus.registry) == loaded, "corpus second roundtrip differs");

  write_checkpoint(dir / "a.ckpt", model_checkpoint(Model(mc)));
  write_checkpoint(dir / "b.ckpt", read_checkpoint(dir / "a.ckpt"));
  o.require(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"), "checkpoint save/load/save is not byte-stable");

  const auto reg = small_registry();
  std::mt19937_64 rng(9);
  const char* words[] = {"good", "bad", "film", "so", "dull", "!", ",", "xyzzy", "job", "I", "screen", "?"};
  auto sentence = [&] {
    std::string s;
    for (std::size_t i = 1 + rng() % 8; i > 0; --i) s += std::string(words[rng() % 12]) + " ";
    return s;
  };
  std::vector<SaevalRecord> fuzz;
  for (int i = 0; i < 1000; ++i) {
    SaevalRecord r;
    switch (rng() % 4) {
      case 0: r = ca_record(sentence(), rng() % 2 ? "positive" : "negative"); break;
      case 1:
        r = msa_record(std::round((std::uniform_real_distribution<double>(-3, 3)(rng)) * 10) / 10, rng() % 2, rng() % 2);
        r.text = sentence();
        break;
      case 2:
        r.task_type = TaskType::ABSA;
        r.dataset_id = "Laptop";
        r.text = sentence();
        r.label = std::string("neutral");
        break;
      default:
        r = erc_record();
        r.text = sentence();
        r.context.clear();
        for (std::size_t k = rng() % 4; k > 0; --k) r.context.push_back({std::to_string(rng() % 16), sentence()});
        r.speaker_id = std::to_string(rng() % 16);
    }
    fuzz.push_back(std::move(r));
  }
  const Vocab fv = Vocab::build({fuzz.begin(), fuzz.begin() + 50}, reg);
  for (const auto& r : fuzz) {
    const PromptSequence p = build_prompt(r, fv, reg);
    const PromptSequence back = resegment(p.flatten(), fv);
    o.require(back.z_tokens == p.z_tokens && back.y_tokens == p.y_tokens && back.x_context == p.x_context &&
                  back.x_tokens == p.x_tokens && back.dataset_index == p.dataset_index,
              "flatten/resegment roundtrip failed");
  }
  if (o.ok) o.detail = "3 stages bit-identical, corpus/checkpoint roundtrips stable, 1000 prompt roundtrips";
  return o;
}

// --- 10 -----------------------------------------------------------------------------------

Outcome dataset_embedding_isolation() {
  Outcome o;
  const SyntheticCorpus corpus = make_synthetic_corpus();
  const Vocab vocab = Vocab::build(corpus.records, corpus.registry);
  ModelConfig mc = model_config_for(vocab, corpus.registry,
                                    {{"model_dim", 16}, {"text_embed_dim", 16}, {"heads", 2}, {"ffn_dim", 32},
                                     {"layers_enc", 1}, {"layers_dec", 1}, {"init_seed", 10}});
  const CepLabelSpaces spaces = CepLabelSpaces::from_registry(corpus.registry);
  TrainConfig tc;
  std::size_t checked = 0;
  for (const SaevalRecord& r : corpus.records) {
    Model m(mc);
    std::mt19937_64 rng(checked);
    PretrainItem it = make_pretrain_item(r, to_polarity(r.label, r.dataset_id, corpus.registry), vocab, corpus.registry, tc, rng);
    const FinetuneItem fi = make_finetune_item(r, vocab, corpus.registry, tc, rng);
    CentroidIndex c;
    for (TaskType t : kAllTasks)
      for (const auto& l : spaces.of(t)) c.centroids[static_cast<std::size_t>(t)][l] = std::vector<double>(mc.model_dim, 0.1);
    it.pseudo = assign_pseudo_labels(pooled_representation(m, it.prompt), c, r.task_type, cep_label(r.label));
    it.has_pseudo = true;
    ObjectiveContext ctx;
    ctx.vocab = &vocab;
    ctx.spaces = spaces;
    ctx.dropout_rate = 0.1;
    const std::size_t active = corpus.registry.index_of(r.dataset_id);
    const std::function<Var(Graph&)> losses[] = {
        [&](Graph& g) { return loss_generation(g, m, std::span(&fi, 1), ctx); },
        [&](Graph& g) { return stage1_loss(g, m, std::span(&it, 1), ctx).total; },
        [&](Graph& g) { return stage2_loss(g, m, std::span(&it, 1), ctx, c).total; },
    };
    for (const auto& f : losses) {
      m.dataset_embedding().zero_grad();
      for (Parameter* p : m.parameters()) p->zero_grad();
      Graph g(true);
      g.backward(f(g));
      const Tensor& grad = m.dataset_embedding().grad;
      for (std::size_t row = 0; row < grad.rows(); ++row) {
        double norm = 0.0;
        for (double v : grad.row(row)) norm += std::abs(v);
        if (row == active) o.require(norm > 0.0, "active row gradient is zero for " + r.dataset_id);
        else o.require(norm == 0.0, "inactive row " + std::to_string(row) + " has gradient for " + r.dataset_id);
      }
      ++checked;
    }
  }
  if (o.ok) o.detail = std::to_string(checked) + " single-sample backward passes across all datasets";
  return o;
}

}  // namespace

int main() {
  log::set_threshold(log::Level::Error);
  const struct {
    int id;
    const char* name;
    Outcome (*run)();
  } criteria[] = {
      {1, "bias arithmetic", bias_arithmetic},
      {2, "gradient fidelity", gradient_fidelity},
      {3, "overfit sanity", overfit_sanity},
      {4, "modal-mask contract", modal_mask_contract},
      {5, "task-average sampling", task_average_sampling},
      {6, "CCL properties", ccl_properties},
      {7, "pseudo-label oracle", pseudo_label_oracle},
      {8, "metric oracles", metric_oracles},
      {9, "determinism and roundtrips", determinism_and_roundtrips},
      {10, "dataset-embedding isolation", dataset_embedding_isolation},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.ok;
    std::printf("%s  %2d  %-28s %s\n", o.ok ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed ? 1 : 0;
}
