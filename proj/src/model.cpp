#include "unisa/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "unisa/error.hpp"

namespace unisa {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// --- config --------------------------------------------------------------------------

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(num_datasets, "num_datasets");
  positive(text_embed_dim, "text_embed_dim");
  positive(model_dim, "model_dim");
  positive(layers_enc, "layers_enc");
  positive(layers_dec, "layers_dec");
  positive(heads, "heads");
  positive(ffn_dim, "ffn_dim");
  positive(max_len, "max_len");
  positive(max_dec_len, "max_dec_len");
  if (model_dim % heads != 0) {
    throw ConfigError("model.model_dim " + std::to_string(model_dim) + " is not divisible by heads " + std::to_string(heads));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model.dropout_rate must lie in [0, 1)");
  if (!(init_std > 0.0)) throw ConfigError("model.init_std must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"num_datasets", num_datasets}, {"text_embed_dim", text_embed_dim},
          {"acoustic_dim", acoustic_dim}, {"visual_dim", visual_dim}, {"model_dim", model_dim},
          {"layers_enc", layers_enc}, {"layers_dec", layers_dec}, {"heads", heads},
          {"ffn_dim", ffn_dim}, {"max_len", max_len}, {"max_dec_len", max_dec_len},
          {"dropout_rate", dropout_rate}, {"init_std", init_std}, {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  const nlohmann::json known = c.to_json();
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ConfigError("unknown model config key '" + k + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("vocab_size", c.vocab_size);
    get("num_datasets", c.num_datasets);
    get("text_embed_dim", c.text_embed_dim);
    get("acoustic_dim", c.acoustic_dim);
    get("visual_dim", c.visual_dim);
    get("model_dim", c.model_dim);
    get("layers_enc", c.layers_enc);
    get("layers_dec", c.layers_dec);
    get("heads", c.heads);
    get("ffn_dim", c.ffn_dim);
    get("max_len", c.max_len);
    get("max_dec_len", c.max_dec_len);
    get("dropout_rate", c.dropout_rate);
    get("init_std", c.init_std);
    get("init_seed", c.init_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

// --- construction --------------------------------------------------------------------

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class Init {
 public:
  Init(std::uint64_t seed, double std) : rng_(seed), normal_(0.0, std) {}
  Parameter normal(std::string name, std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (double& v : t.data()) v = normal_(rng_);
    return {std::move(name), std::move(t)};
  }
  static Parameter constant(std::string name, std::size_t r, std::size_t c, double v) {
    return {std::move(name), Tensor({r, c}, v)};
  }
  Linear linear(const std::string& name, std::size_t in, std::size_t out) {
    return {normal(name + ".w", in, out), constant(name + ".b", 1, out, 0.0)};
  }
  LayerNormParams norm(const std::string& name, std::size_t d) {
    return {constant(name + ".gamma", 1, d, 1.0), constant(name + ".beta", 1, d, 0.0)};
  }
  AttentionParams attention(const std::string& name, std::size_t d) {
    return {linear(name + ".q", d, d), linear(name + ".k", d, d), linear(name + ".v", d, d), linear(name + ".o", d, d)};
  }
  FeedForwardParams ffn(const std::string& name, std::size_t d, std::size_t h) {
    return {linear(name + ".in", d, h), linear(name + ".out", h, d)};
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

template <typename P, typename F>
void visit_params(P& m, F&& f);

std::vector<std::size_t> iota(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v;
  for (std::size_t i = begin; i < end; ++i) v.push_back(i);
  return v;
}

std::vector<int> iota_int(std::size_t n) {
  std::vector<int> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i);
  return v;
}

Var drop(Var x, const DropoutCtx& d) { return d.rng && d.rate > 0.0 ? dropout(x, d.rate, *d.rng) : x; }

}  // namespace

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.model_dim, e = config_.text_embed_dim;
  Init init(config_.init_seed, config_.init_std);
  tok_emb_ = init.normal("tok_emb", config_.vocab_size, e);
  out_bias_ = Init::constant("out_bias", 1, config_.vocab_size, 0.0);
  if (e != d) {
    text_in_ = init.linear("text_in", e, d);
    text_out_ = init.linear("text_out", d, e);
  }
  if (config_.acoustic_dim) acoustic_proj_ = init.linear("acoustic_proj", config_.acoustic_dim, d);
  if (config_.visual_dim) visual_proj_ = init.linear("visual_proj", config_.visual_dim, d);
  acoustic_mask_ = init.normal("acoustic_mask", 1, d);
  visual_mask_ = init.normal("visual_mask", 1, d);
  type_emb_ = init.normal("type_emb", 3, d);
  pos_emb_ = init.normal("pos_emb", config_.max_len, d);
  dec_pos_emb_ = init.normal("dec_pos_emb", config_.max_dec_len, d);
  data_emb_ = init.normal("data_emb", config_.num_datasets, d);
  for (std::size_t i = 0; i < config_.layers_enc; ++i) {
    const std::string n = "enc." + std::to_string(i);
    enc_.push_back({init.norm(n + ".ln1", d), init.norm(n + ".ln2", d), init.attention(n + ".self", d),
                    init.ffn(n + ".ffn", d, config_.ffn_dim)});
  }
  for (std::size_t i = 0; i < config_.layers_dec; ++i) {
    const std::string n = "dec." + std::to_string(i);
    dec_.push_back({init.norm(n + ".ln1", d), init.norm(n + ".ln2", d), init.norm(n + ".ln3", d),
                    init.attention(n + ".self", d), init.attention(n + ".cross", d),
                    init.ffn(n + ".ffn", d, config_.ffn_dim)});
  }
  enc_final_ = init.norm("enc.final", d);
  dec_final_ = init.norm("dec.final", d);
}

namespace {

template <typename P, typename F>
void visit_params(P& m, F&& f) {
  auto lin = [&](auto& l) {
    f(l.w);
    f(l.b);
  };
  auto ln = [&](auto& n) {
    f(n.gamma);
    f(n.beta);
  };
  auto att = [&](auto& a) {
    lin(a.q);
    lin(a.k);
    lin(a.v);
    lin(a.o);
  };
  f(m.tok_emb);
  f(m.out_bias);
  if (m.text_in) lin(*m.text_in);
  if (m.text_out) lin(*m.text_out);
  if (m.acoustic_proj) lin(*m.acoustic_proj);
  if (m.visual_proj) lin(*m.visual_proj);
  f(m.acoustic_mask);
  f(m.visual_mask);
  f(m.type_emb);
  f(m.pos_emb);
  f(m.dec_pos_emb);
  f(m.data_emb);
  for (auto& l : m.enc) {
    ln(l.ln1);
    att(l.self);
    ln(l.ln2);
    lin(l.ffn.in);
    lin(l.ffn.out);
  }
  for (auto& l : m.dec) {
    ln(l.ln1);
    att(l.self);
    ln(l.ln2);
    att(l.cross);
    ln(l.ln3);
    lin(l.ffn.in);
    lin(l.ffn.out);
  }
  ln(m.enc_final);
  ln(m.dec_final);
}

}  // namespace

// Member references bundled so one visitor serves both const and mutable traversal.
#define UNISA_MODEL_REFS(Q)                                                                                       \
  struct {                                                                                                        \
    Q Parameter& tok_emb;                                                                                         \
    Q Parameter& out_bias;                                                                                        \
    Q std::optional<Linear>& text_in;                                                                             \
    Q std::optional<Linear>& text_out;                                                                            \
    Q std::optional<Linear>& acoustic_proj;                                                                       \
    Q std::optional<Linear>& visual_proj;                                                                         \
    Q Parameter& acoustic_mask;                                                                                   \
    Q Parameter& visual_mask;                                                                                     \
    Q Parameter& type_emb;                                                                                        \
    Q Parameter& pos_emb;                                                                                         \
    Q Parameter& dec_pos_emb;                                                                                     \
    Q Parameter& data_emb;                                                                                        \
    Q std::vector<EncoderLayer>& enc;                                                                             \
    Q std::vector<DecoderLayer>& dec;                                                                             \
    Q LayerNormParams& enc_final;                                                                                 \
    Q LayerNormParams& dec_final;                                                                                 \
  } refs{tok_emb_, out_bias_, text_in_, text_out_, acoustic_proj_, visual_proj_, acoustic_mask_, visual_mask_,   \
         type_emb_, pos_emb_, dec_pos_emb_, data_emb_, enc_, dec_, enc_final_, dec_final_};

std::vector<Parameter*> Model::parameters() {
  UNISA_MODEL_REFS()
  std::vector<Parameter*> out;
  visit_params(refs, [&](Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  UNISA_MODEL_REFS(const)
  std::vector<const Parameter*> out;
  visit_params(refs, [&](const Parameter& p) { out.push_back(&p); });
  return out;
}

#undef UNISA_MODEL_REFS

Parameter& Model::parameter(std::string_view name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return *p;
  }
  throw IndexError("no parameter named '" + std::string(name) + "'");
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

// --- forward -------------------------------------------------------------------------

Var Model::linear(Graph& g, Linear& l, Var x) { return add_row(matmul(x, g.param(l.w)), g.param(l.b)); }

Var Model::norm(Graph& g, LayerNormParams& p, Var x) { return layer_norm(x, g.param(p.gamma), g.param(p.beta)); }

Var Model::attention(Graph& g, AttentionParams& p, Var q_in, Var kv_in, const Tensor* additive_mask) {
  const std::size_t h = config_.heads, dh = config_.model_dim / h;
  const Var q = linear(g, p.q, q_in), k = linear(g, p.k, kv_in), v = linear(g, p.v, kv_in);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const Var mask = additive_mask ? g.constant(*additive_mask) : Var();
  std::vector<Var> heads;
  for (std::size_t i = 0; i < h; ++i) {
    Var s = scale(matmul_nt(slice_cols(q, i * dh, dh), slice_cols(k, i * dh, dh)), inv);
    if (additive_mask) s = add(s, mask);
    heads.push_back(matmul(softmax_rows(s), slice_cols(v, i * dh, dh)));
  }
  return linear(g, p.o, h == 1 ? heads[0] : concat_cols(heads));
}

Var Model::feed_forward(Graph& g, FeedForwardParams& p, Var x, const DropoutCtx& dropout) {
  return drop(linear(g, p.out, gelu(linear(g, p.in, x))), dropout);
}

EncoderOutput Model::encode(Graph& g, const PromptSequence& prompt, const EncodeOptions& options) {
  std::vector<int> ids = prompt.flatten();
  const std::size_t n_tok = ids.size();
  const std::size_t length = prompt.stream_length();
  if (options.pad_to && options.pad_to < length) {
    throw ContractError("pad_to " + std::to_string(options.pad_to) + " is shorter than the stream (" +
                        std::to_string(length) + ")");
  }
  const std::size_t total = std::max(length, options.pad_to);
  if (total > config_.max_len) {
    throw ContractError("encoder stream of " + std::to_string(total) + " positions exceeds max_len " +
                        std::to_string(config_.max_len));
  }
  if (prompt.dataset_index >= config_.num_datasets) {
    throw IndexError("dataset index " + std::to_string(prompt.dataset_index) + " outside " +
                     std::to_string(config_.num_datasets) + " dataset embeddings");
  }
  const MaskPlan* plan = options.mask_plan;
  if (plan) {
    for (std::size_t p : plan->masked_token_positions) {
      if (p >= n_tok) throw IndexError("mask position " + std::to_string(p) + " outside " + std::to_string(n_tok) + " tokens");
      ids[p] = Vocab::kMask;
    }
  }
  for (std::size_t i = length; i < total; ++i) ids.push_back(Vocab::kPad);

  const Var tok_table = g.param(tok_emb_);
  std::vector<int> text_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_tok));
  std::vector<Var> parts;
  std::vector<int> types(n_tok, 0);
  auto embed_text = [&](std::span<const int> t) {
    Var x = embedding(tok_table, t);
    return text_in_ ? linear(g, *text_in_, x) : x;
  };
  parts.push_back(embed_text(text_ids));

  std::array<std::size_t, 2> offset{0, 0};
  for (const ModalSegment& seg : prompt.modal_segments) {
    if (!seg.frames || seg.frames->rows == 0) continue;
    const bool acoustic = seg.modality == Modality::Acoustic;
    std::optional<Linear>& proj = acoustic ? acoustic_proj_ : visual_proj_;
    const std::size_t want = acoustic ? config_.acoustic_dim : config_.visual_dim;
    if (!proj || seg.frames->cols != want) {
      throw DimensionError(std::string(acoustic ? "acoustic" : "visual") + " frames have width " +
                           std::to_string(seg.frames->cols) + ", model expects " + std::to_string(want));
    }
    Var x = linear(g, *proj, g.constant(Tensor({seg.frames->rows, seg.frames->cols}, seg.frames->values)));
    if (plan) {
      std::vector<std::size_t> rows;
      std::size_t& off = offset[static_cast<std::size_t>(seg.modality)];
      for (std::size_t f : plan->frames(seg.modality)) {
        if (f >= off && f < off + seg.frames->rows) rows.push_back(f - off);
      }
      if (!rows.empty()) x = replace_rows(x, g.param(acoustic ? acoustic_mask_ : visual_mask_), rows);
    }
    offset[static_cast<std::size_t>(seg.modality)] += seg.frames->rows;
    parts.push_back(x);
    types.insert(types.end(), seg.frames->rows, acoustic ? 1 : 2);
  }
  if (total > length) {
    std::vector<int> pads(total - length, Vocab::kPad);
    parts.push_back(embed_text(pads));
    types.insert(types.end(), total - length, 0);
  }

  Var x = parts.size() == 1 ? parts[0] : concat_rows(parts);
  x = add(x, embedding(g.param(type_emb_), types));
  x = add(x, embedding(g.param(pos_emb_), iota_int(total)));
  Tensor onehot({1, config_.num_datasets});
  onehot[prompt.dataset_index] = 1.0;
  x = add_row(x, matmul(g.constant(std::move(onehot)), g.param(data_emb_)));
  x = drop(x, options.dropout);

  std::optional<Tensor> key_mask;
  if (total > length) {
    key_mask.emplace(std::vector<std::size_t>{total, total});
    for (std::size_t i = 0; i < total; ++i)
      for (std::size_t j = length; j < total; ++j) (*key_mask)(i, j) = kNegInf;
  }
  for (EncoderLayer& layer : enc_) {
    const Var h = norm(g, layer.ln1, x);
    x = add(x, drop(attention(g, layer.self, h, h, key_mask ? &*key_mask : nullptr), options.dropout));
    x = add(x, feed_forward(g, layer.ffn, norm(g, layer.ln2, x), options.dropout));
  }
  x = norm(g, enc_final_, x);

  const auto real = iota(0, length);
  return {x, mean_rows(x, real), length, n_tok};
}

Var Model::decode_hidden(Graph& g, const EncoderOutput& enc, std::span<const int> dec_input, const DropoutCtx& dropout) {
  const std::size_t n = dec_input.size();
  if (n == 0) throw ContractError("decoder input is empty");
  if (n > config_.max_dec_len) {
    throw ContractError("decoder input of " + std::to_string(n) + " exceeds max_dec_len " + std::to_string(config_.max_dec_len));
  }
  Var y = embedding(g.param(tok_emb_), dec_input);
  if (text_in_) y = linear(g, *text_in_, y);
  y = add(y, embedding(g.param(dec_pos_emb_), iota_int(n)));
  y = drop(y, dropout);

  std::optional<Tensor> causal;
  if (n > 1) {
    causal.emplace(std::vector<std::size_t>{n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) (*causal)(i, j) = kNegInf;
  }
  const std::size_t total = enc.states.rows();
  std::optional<Tensor> cross_mask;
  if (total > enc.length) {
    cross_mask.emplace(std::vector<std::size_t>{n, total});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = enc.length; j < total; ++j) (*cross_mask)(i, j) = kNegInf;
  }
  for (DecoderLayer& layer : dec_) {
    const Var h = norm(g, layer.ln1, y);
    y = add(y, drop(attention(g, layer.self, h, h, causal ? &*causal : nullptr), dropout));
    y = add(y, drop(attention(g, layer.cross, norm(g, layer.ln2, y), enc.states, cross_mask ? &*cross_mask : nullptr),
                    dropout));
    y = add(y, feed_forward(g, layer.ffn, norm(g, layer.ln3, y), dropout));
  }
  return norm(g, dec_final_, y);
}

Var Model::output_logits(Graph& g, Var hidden, std::span<const int> columns) {
  if (text_out_) hidden = linear(g, *text_out_, hidden);
  if (columns.empty()) return add_row(matmul_nt(hidden, g.param(tok_emb_)), g.param(out_bias_));
  std::vector<std::size_t> cols;
  for (int c : columns) {
    if (c < 0 || static_cast<std::size_t>(c) >= config_.vocab_size) throw IndexError("output column " + std::to_string(c));
    cols.push_back(static_cast<std::size_t>(c));
  }
  return add_row(matmul_nt(hidden, gather_rows(g.param(tok_emb_), cols)), gather_cols(g.param(out_bias_), cols));
}

std::vector<int> Model::generate(const PromptSequence& prompt, std::size_t max_new) {
  if (max_new == 0) throw ContractError("generate needs max_new >= 1");
  Graph g(false);
  const EncoderOutput enc = encode(g, prompt);
  std::vector<int> input{Vocab::kBos};
  std::vector<int> out;
  while (out.size() < max_new && input.size() <= config_.max_dec_len) {
    const Var hidden = decode_hidden(g, enc, input);
    const std::size_t last[] = {input.size() - 1};
    const Tensor& logits = output_logits(g, gather_rows(hidden, last)).value();
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits[j] > logits[best]) best = j;
    }
    out.push_back(static_cast<int>(best));
    if (static_cast<int>(best) == Vocab::kEos) break;
    input.push_back(static_cast<int>(best));
  }
  return out;
}

// --- checkpoints ---------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'U', 'N', 'I', 'S', 'A', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("truncated checkpoint while reading " + what);
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return &t;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, DType dtype) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  const std::string header = ckpt.header.dump();
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, t] : ckpt.arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    if (dtype == DType::F64) {
      out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    } else {
      std::vector<float> f(t.data().begin(), t.data().end());
      out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
    }
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  if (const auto v = get<std::uint32_t>(in, "version"); v != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ckpt;
  const auto header_len = get<std::uint64_t>(in, "header length");
  if (header_len > (1ull << 32)) throw CheckpointError("implausible checkpoint header length");
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) throw CheckpointError("truncated checkpoint header");
  try {
    ckpt.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const auto count = get<std::uint32_t>(in, "array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw CheckpointError("truncated array name");
    const auto dtype = static_cast<DType>(get<std::uint8_t>(in, name));
    if (dtype != DType::F32 && dtype != DType::F64) throw CheckpointError("array " + name + " has an unknown dtype");
    const auto ndim = get<std::uint32_t>(in, name);
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(get<std::uint64_t>(in, name));
      n *= shape.back();
    }
    std::vector<double> data(n);
    if (dtype == DType::F64) {
      if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
        throw CheckpointError("truncated data for " + name);
      }
    } else {
      std::vector<float> f(n);
      if (!in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
        throw CheckpointError("truncated data for " + name);
      }
      std::copy(f.begin(), f.end(), data.begin());
    }
    ckpt.arrays.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint arrays");
  return ckpt;
}

Checkpoint model_checkpoint(const Model& model) {
  Checkpoint c;
  c.header["model"] = model.config().to_json();
  for (const Parameter* p : model.parameters()) c.arrays.emplace_back("model/" + p->name, p->value);
  return c;
}

void load_parameters(Model& model, const Checkpoint& ckpt) {
  std::set<std::string> expected;
  for (Parameter* p : model.parameters()) {
    const std::string key = "model/" + p->name;
    expected.insert(key);
    const Tensor* t = ckpt.find(key);
    if (!t) throw CheckpointError("checkpoint lacks parameter " + p->name);
    if (t->shape() != p->value.shape()) {
      throw CheckpointError("shape mismatch for " + p->name + ": checkpoint " + t->shape_str() + ", model " +
                            p->value.shape_str());
    }
    p->value = *t;
    p->zero_grad();
  }
  for (const auto& [name, t] : ckpt.arrays) {
    if (name.rfind("model/", 0) == 0 && !expected.count(name)) throw CheckpointError("unexpected parameter " + name);
  }
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.header.contains("model")) throw CheckpointError("checkpoint header has no model config");
  Model m(ModelConfig::from_json(ckpt.header.at("model")));
  load_parameters(m, ckpt);
  return m;
}

}  // namespace unisa
