#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <iterator>

#include "fixtures.hpp"
#include "unisa/error.hpp"
#include "unisa/gradcheck.hpp"
#include "unisa/model.hpp"

using namespace unisa;
using namespace unisa::testing;

namespace {

struct Setup {
  DatasetRegistry reg = small_registry();
  Vocab vocab = Vocab::build({erc_record(), msa_record(), ca_record("a gripping film", "positive")}, reg);

  ModelConfig config(std::uint64_t seed = 7) const {
    ModelConfig c;
    c.vocab_size = vocab.size();
    c.num_datasets = reg.datasets().size();
    c.acoustic_dim = 4;
    c.visual_dim = 3;
    c.text_embed_dim = 16;
    c.model_dim = 16;
    c.heads = 2;
    c.ffn_dim = 32;
    c.layers_enc = 1;
    c.layers_dec = 1;
    c.max_len = 64;
    c.dropout_rate = 0.0;
    c.init_std = 0.3;
    c.init_seed = seed;
    return c;
  }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("config validation") {
  Setup s;
  auto c = s.config();
  c.heads = 3;
  CHECK_THROWS_AS(Model{c}, ConfigError);
  c = s.config();
  c.vocab_size = 0;
  CHECK_THROWS_AS(Model{c}, ConfigError);
  CHECK(ModelConfig::from_json(s.config().to_json()).to_json() == s.config().to_json());
  CHECK_THROWS_AS(ModelConfig::from_json({{"bogus", 1}}), ConfigError);
}

TEST_CASE("encode shapes") {
  Setup s;
  Model m(s.config());
  Graph g(false);
  const auto ca = build_prompt(ca_record("a gripping film", "positive"), s.vocab, s.reg);
  const auto out = m.encode(g, ca);
  CHECK(out.states.rows() == ca.token_count());
  CHECK(out.pooled.cols() == 16);

  const auto msa = build_prompt(msa_record(), s.vocab, s.reg);
  const auto mo = m.encode(g, msa);
  CHECK(mo.states.rows() == msa.token_count() + 8);

  auto other = ca;
  other.dataset_index = 0;
  CHECK(!(m.encode(g, other).pooled.value() == out.pooled.value()));

  auto small = s.config();
  small.max_len = 8;
  Model tiny(small);
  CHECK_THROWS_AS(tiny.encode(g, msa), ContractError);
}

TEST_CASE("padding never changes the pooled output") {
  Setup s;
  Model m(s.config());
  Graph g(false);
  const auto p = build_prompt(msa_record(), s.vocab, s.reg);
  const Tensor ref = m.encode(g, p).pooled.value();
  for (std::size_t pad : {p.stream_length(), p.stream_length() + 1, p.stream_length() + 9, std::size_t{64}}) {
    EncodeOptions o;
    o.pad_to = pad;
    const auto out = m.encode(g, p, o);
    CHECK(out.states.rows() == pad);
    CHECK(out.pooled.value() == ref);
  }
}

TEST_CASE("mask plan changes the encoding only where applied") {
  Setup s;
  Model m(s.config());
  Graph g(false);
  const auto p = build_prompt(msa_record(), s.vocab, s.reg);
  MaskPlan plan;
  plan.setting = ModalitySetting::TAV;
  EncodeOptions o;
  o.mask_plan = &plan;
  CHECK(m.encode(g, p, o).pooled.value() == m.encode(g, p).pooled.value());
  plan.masked_frames[0] = {1};
  CHECK(!(m.encode(g, p, o).pooled.value() == m.encode(g, p).pooled.value()));
}

TEST_CASE("dataset embedding gradient is isolated to the active row") {
  Setup s;
  Model m(s.config());
  const auto p = build_prompt(erc_record(), s.vocab, s.reg);
  Graph g;
  const auto enc = m.encode(g, p);
  const int in[] = {Vocab::kBos};
  const std::size_t target[] = {static_cast<std::size_t>(s.vocab.id("joy"))};
  g.backward(softmax_cross_entropy(m.output_logits(g, m.decode_hidden(g, enc, in)), target));
  const Tensor& grad = m.dataset_embedding().grad;
  for (std::size_t r = 0; r < grad.rows(); ++r) {
    double norm = 0.0;
    for (double v : grad.row(r)) norm += std::abs(v);
    if (r == p.dataset_index) CHECK(norm > 0.0);
    else CHECK(norm == 0.0);
  }
}

TEST_CASE("generation loss gradient matches finite differences") {
  Setup s;
  Model m(s.config(11));
  const auto p = build_prompt(msa_record(), s.vocab, s.reg);
  MaskPlan plan;
  plan.masked_token_positions = {p.x_begin() + 1};
  plan.masked_frames[1] = {0};
  const auto target_ids = s.vocab.tokenize("+1.4");
  std::vector<int> dec_in{Vocab::kBos};
  dec_in.insert(dec_in.end(), target_ids.begin(), target_ids.end());
  std::vector<std::size_t> targets(target_ids.begin(), target_ids.end());
  targets.push_back(Vocab::kEos);
  auto loss = [&](Graph& g) {
    EncodeOptions o;
    o.mask_plan = &plan;
    const auto enc = m.encode(g, p, o);
    return softmax_cross_entropy(m.output_logits(g, m.decode_hidden(g, enc, dec_in)), targets, Reduction::Sum);
  };
  auto params = m.parameters();
  GradCheckOptions opt;
  opt.max_coords_per_param = 6;
  opt.seed = 3;
  CHECK(finite_diff_check(loss, params, opt) <= 1e-4);
}

TEST_CASE("generate is deterministic and bounded") {
  Setup s;
  Model m(s.config());
  const auto p = build_prompt(ca_record("so dull", "negative"), s.vocab, s.reg);
  CHECK(m.generate(p, 1).size() == 1);
  const auto a = m.generate(p, 6);
  CHECK(a.size() <= 6);
  CHECK(a == m.generate(p, 6));
  CHECK_THROWS_AS(m.generate(p, 0), ContractError);
}

TEST_CASE("checkpoint roundtrip") {
  Setup s;
  const auto dir = temp_dir("model_ckpt");
  Model m(s.config());
  auto c = model_checkpoint(m);
  c.header["note"] = "x";
  write_checkpoint(dir / "a.ckpt", c);
  const auto back = read_checkpoint(dir / "a.ckpt");
  write_checkpoint(dir / "b.ckpt", back);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));

  Model r = model_from_checkpoint(back);
  const auto pa = m.parameters();
  const auto pb = r.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);

  write_checkpoint(dir / "f.ckpt", c, DType::F32);
  const auto f = read_checkpoint(dir / "f.ckpt");
  CHECK(std::abs(f.arrays[0].second[0] - c.arrays[0].second[0]) < 1e-6);

  auto wide = s.config();
  wide.ffn_dim = 48;
  Model other(wide);
  CHECK_THROWS_AS(load_parameters(other, back), CheckpointError);

  std::ofstream(dir / "junk.ckpt") << "nope";
  CHECK_THROWS_AS(read_checkpoint(dir / "junk.ckpt"), CheckpointError);
  auto bytes = slurp(dir / "a.ckpt");
  std::ofstream(dir / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  CHECK_THROWS_AS(read_checkpoint(dir / "cut.ckpt"), CheckpointError);
}
