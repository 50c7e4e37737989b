#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "unisa/error.hpp"
#include "unisa/evaluation.hpp"
#include "unisa/model.hpp"

using namespace unisa;
using namespace unisa::testing;

namespace {

using Strs = std::vector<std::string>;

// Independent per-class tally.
struct Tally {
  std::map<std::string, double> tp, fp, fn, support;
  Tally(const Strs& g, const Strs& p) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      support[g[i]] += 1;
      if (g[i] == p[i]) tp[g[i]] += 1;
      else {
        fn[g[i]] += 1;
        fp[p[i]] += 1;
      }
    }
  }
  double f1(const std::string& c) {
    const double precision = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double recall = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
};

}  // namespace

TEST_CASE("WA") {
  const Strs g = {"a", "a", "b", "b"}, p = {"a", "b", "b", "b"};
  CHECK(metric_wa(g, p) == 0.75);
  CHECK(metric_wa(g, g) == 1.0);
  CHECK_THROWS_AS(metric_wa(g, Strs{"a"}), MetricError);
  CHECK_THROWS_AS(metric_wa(Strs{}, Strs{}), MetricError);
}

TEST_CASE("WF1") {
  const Strs g = {"a", "a", "b"}, p = {"a", "b", "b"};
  CHECK(metric_wf1(g, p) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(std::abs(metric_wf1(g, p) - 0.6667) < 5e-5);
  CHECK(metric_wf1(g, g) == 1.0);
  // A predicted class outside the gold set lowers recall but is not itself averaged.
  CHECK(metric_wf1(Strs{"a", "a"}, Strs{"a", "z"}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("MF1 excluding neutral") {
  CHECK(metric_mf1_excl_neutral(Strs{"a", "b", "neutral"}, Strs{"a", "b", "neutral"}, "neutral") == 1.0);
  CHECK_THROWS_AS(metric_mf1_excl_neutral(Strs{"neutral", "neutral"}, Strs{"a", "neutral"}, "neutral"), MetricError);
  // a: tp 1, fn 1 (predicted neutral) -> F1 2/3; b: tp 1, fp 1 -> 2/3.
  const Strs g = {"a", "a", "b", "neutral"}, p = {"a", "neutral", "b", "b"};
  CHECK(metric_mf1_excl_neutral(g, p, "neutral") == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("classification metrics match a brute-force tally") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 30;
    Strs g(n), p(n);
    const char* labels[] = {"neutral", "joy", "anger", "sad"};
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = labels[rng() % 4];
      p[i] = labels[rng() % 4];
    }
    Tally t(g, p);
    double correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += g[i] == p[i];
    CHECK(metric_wa(g, p) == doctest::Approx(correct / n).epsilon(1e-12));
    double wf1 = 0;
    for (auto& [c, s] : t.support) wf1 += s / n * t.f1(c);
    CHECK(metric_wf1(g, p) == doctest::Approx(wf1).epsilon(1e-12));
    double mf1 = 0, k = 0;
    for (auto& [c, s] : t.support) {
      if (c == "neutral") continue;
      mf1 += t.f1(c);
      k += 1;
    }
    if (k > 0) CHECK(metric_mf1_excl_neutral(g, p, "neutral") == doctest::Approx(mf1 / k).epsilon(1e-12));
    else CHECK_THROWS_AS(metric_mf1_excl_neutral(g, p, "neutral"), MetricError);

    // Jointly permuting pairs changes nothing.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    Strs g2, p2;
    for (std::size_t i : idx) {
      g2.push_back(g[i]);
      p2.push_back(p[i]);
    }
    CHECK(metric_wa(g2, p2) == metric_wa(g, p));
    CHECK(metric_wf1(g2, p2) == doctest::Approx(metric_wf1(g, p)).epsilon(1e-14));
  }
}

TEST_CASE("MSA metrics") {
  const std::vector<double> g = {1.0, -1.0}, p = {0.0, -1.0};
  const auto m = metrics_msa(g, p);
  CHECK(m.mae == 0.5);
  CHECK(m.acc7 == 0.5);
  CHECK(m.acc2 == 0.5);
  const auto same = metrics_msa(g, g);
  CHECK(same.mae == 0.0);
  CHECK(same.acc7 == 1.0);
  CHECK(same.acc2 == 1.0);
  CHECK(metrics_msa(std::vector<double>{2.4}, std::vector<double>{2.4}).acc7 == 1.0);
  CHECK(metrics_msa(std::vector<double>{2.5}, std::vector<double>{3.0}).acc7 == 1.0);
  CHECK(metrics_msa(std::vector<double>{-0.5}, std::vector<double>{-0.4}).acc7 == 0.0);
  CHECK(std::isnan(metrics_msa(std::vector<double>{0.0}, std::vector<double>{1.0}).acc2));
  // Zero gold excluded, zero prediction counts as non-positive.
  CHECK(metrics_msa(std::vector<double>{0.0, 1.0, -2.0}, std::vector<double>{3.0, 0.0, 0.0}).acc2 == 0.5);
  CHECK_THROWS_AS(metrics_msa(std::vector<double>{}, std::vector<double>{}), MetricError);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = std::round(u(rng) * 2) / 2;
      b[i] = u(rng);
    }
    double mae = 0, c7 = 0, n2 = 0, c2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mae += std::abs(a[i] - b[i]);
      auto bin = [](double x) { return std::clamp(x < 0 ? -std::floor(-x + 0.5) : std::floor(x + 0.5), -3.0, 3.0); };
      c7 += bin(a[i]) == bin(b[i]);
      if (a[i] != 0) {
        n2 += 1;
        c2 += (a[i] > 0) == (b[i] > 0);
      }
    }
    const auto r = metrics_msa(a, b);
    CHECK(r.mae == doctest::Approx(mae / n).epsilon(1e-12));
    CHECK(r.acc7 == doctest::Approx(c7 / n).epsilon(1e-12));
    if (n2 > 0) CHECK(r.acc2 == doctest::Approx(c2 / n2).epsilon(1e-12));
  }
}

TEST_CASE("score_dataset follows the registry metric declaration") {
  const auto reg = small_registry();
  std::vector<SamplePrediction> s = {{std::string("joy"), std::string("joy"), false},
                                     {std::string("neutral"), std::string("joy"), true}};
  const auto r = score_dataset(reg.at("MELD"), s);
  CHECK(r.metrics.size() == 2);
  CHECK(r.metrics.at("WA") == 0.5);
  CHECK(r.metrics.count("WF1"));
  const auto j = r.to_json();
  CHECK(j["samples"][1]["fallback"] == true);

  const auto m = score_dataset(reg.at("MOSI"), {{1.0, 1.0, false}});
  CHECK(m.metrics.at("MAE") == 0.0);
  CHECK(m.metrics.size() == 3);
  CHECK(format_eval_table(std::vector<EvalResult>{r, m}).find("MELD") != std::string::npos);
}

TEST_CASE("evaluate covers every registered dataset") {
  const auto reg = small_registry();
  const std::vector<SaevalRecord> recs = {erc_record(), msa_record(), ca_record("dull", "negative")};
  const Vocab v = Vocab::build(recs, reg);
  ModelConfig c;
  c.vocab_size = v.size();
  c.num_datasets = 4;
  c.acoustic_dim = 4;
  c.visual_dim = 3;
  c.model_dim = c.text_embed_dim = 8;
  c.heads = 2;
  c.ffn_dim = 8;
  c.layers_enc = c.layers_dec = 1;
  Model m(c);
  const auto res = evaluate(m, recs, v, reg, 4);
  REQUIRE(res.size() == 4);
  CHECK(res[0].samples.empty());
  CHECK(res[1].samples.size() == 1);
  CHECK(res[1].metrics.count("MAE"));
  CHECK(res[2].metrics.count("WF1"));
}
