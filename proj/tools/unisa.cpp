// Command-line entry point: corpus validation, training stages, evaluation, embedding export,
// bias reports and synthetic corpus generation.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "unisa/bias.hpp"
#include "unisa/error.hpp"
#include "unisa/evaluation.hpp"
#include "unisa/log.hpp"
#include "unisa/synthetic.hpp"
#include "unisa/training.hpp"

#ifndef UNISA_VERSION
#define UNISA_VERSION "0.0.0"
#endif
#ifndef UNISA_DATA_DIR
#define UNISA_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace unisa;

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string resume;
  std::vector<std::string> corpus;
  std::vector<std::string> validation;
  std::string registry;
  std::string matrix;
  std::string embeddings;
  std::string correspondence;
  std::vector<std::string> datasets;
  std::optional<std::size_t> max_steps;
  std::optional<std::size_t> epochs;
  std::vector<std::size_t> sizes;
};

// Flag values win over the config file.
struct RunConfig {
  std::vector<fs::path> corpus;
  std::vector<fs::path> validation;
  fs::path registry;
  fs::path checkpoint;
  fs::path resume;
  fs::path out = "unisa_out";
  fs::path matrix;
  fs::path embeddings;
  fs::path correspondence;
  std::vector<std::string> datasets;
  std::uint64_t seed = 0;
  TrainConfig train;
  json model = json::object();
  json resolved;
};

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(p.string() + " is not valid JSON");
  return j;
}

std::vector<fs::path> paths_of(const json& j) {
  std::vector<fs::path> out;
  if (j.is_string()) out.emplace_back(j.get<std::string>());
  else
    for (const auto& s : j) out.emplace_back(s.get<std::string>());
  return out;
}

void require_exists(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string(what) + " path is required");
  if (!fs::exists(p)) throw ConfigError(std::string(what) + " path does not exist: " + p.string());
}

RunConfig resolve(const Options& o) {
  RunConfig rc;
  json file = json::object();
  if (!o.config_path.empty()) {
    require_exists(o.config_path, "config");
    file = read_json_file(o.config_path);
    if (!file.is_object()) throw ConfigError("run config must be a JSON object");
    static const std::set<std::string> known = {"corpus", "validation", "registry", "checkpoint", "resume",
                                                "out", "matrix", "embeddings", "correspondence", "datasets",
                                                "seed", "train", "model"};
    for (const auto& [k, v] : file.items()) {
      if (!known.count(k)) throw ConfigError("unknown run config key '" + k + "'");
    }
  }
  try {
    if (file.contains("corpus")) rc.corpus = paths_of(file["corpus"]);
    if (file.contains("validation")) rc.validation = paths_of(file["validation"]);
    auto str = [&](const char* k, fs::path& dst) {
      if (file.contains(k)) dst = file[k].get<std::string>();
    };
    str("registry", rc.registry);
    str("checkpoint", rc.checkpoint);
    str("resume", rc.resume);
    str("out", rc.out);
    str("matrix", rc.matrix);
    str("embeddings", rc.embeddings);
    str("correspondence", rc.correspondence);
    if (file.contains("datasets")) rc.datasets = file["datasets"].get<std::vector<std::string>>();
    if (file.contains("seed")) rc.seed = file["seed"].get<std::uint64_t>();
    if (file.contains("model")) rc.model = file["model"];
    if (file.contains("train")) rc.train = TrainConfig::from_json(file["train"], rc.train);
    else if (file.contains("seed")) rc.train.seed = rc.seed;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (file.contains("train") && file["train"].contains("seed") && !file.contains("seed")) rc.seed = rc.train.seed;

  if (!o.corpus.empty()) rc.corpus.assign(o.corpus.begin(), o.corpus.end());
  if (!o.validation.empty()) rc.validation.assign(o.validation.begin(), o.validation.end());
  if (!o.registry.empty()) rc.registry = o.registry;
  if (!o.checkpoint.empty()) rc.checkpoint = o.checkpoint;
  if (!o.resume.empty()) rc.resume = o.resume;
  if (!o.out.empty()) rc.out = o.out;
  if (!o.matrix.empty()) rc.matrix = o.matrix;
  if (!o.embeddings.empty()) rc.embeddings = o.embeddings;
  if (!o.correspondence.empty()) rc.correspondence = o.correspondence;
  if (!o.datasets.empty()) rc.datasets = o.datasets;
  if (o.seed) rc.seed = *o.seed;
  rc.train.seed = rc.seed;
  if (o.max_steps) rc.train.max_steps = *o.max_steps;
  if (o.epochs) rc.train.epochs = *o.epochs;
  rc.train.validate();

  auto strs = [](const std::vector<fs::path>& v) {
    json a = json::array();
    for (const auto& p : v) a.push_back(p.string());
    return a;
  };
  rc.resolved = {{"command", o.command},          {"corpus", strs(rc.corpus)},
                 {"validation", strs(rc.validation)}, {"registry", rc.registry.string()},
                 {"checkpoint", rc.checkpoint.string()}, {"resume", rc.resume.string()},
                 {"out", rc.out.string()},        {"matrix", rc.matrix.string()},
                 {"embeddings", rc.embeddings.string()}, {"correspondence", rc.correspondence.string()},
                 {"datasets", rc.datasets},       {"seed", rc.seed},
                 {"train", rc.train.to_json()},   {"model", rc.model}};
  return rc;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << s;
}

void write_manifest(const RunConfig& rc, const json& artifacts) {
  fs::create_directories(rc.out);
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(rc.resolved.dump())));
  const json m = {{"version", UNISA_VERSION}, {"command", rc.resolved["command"]}, {"seed", rc.seed},
                  {"config_hash", hash},       {"config", rc.resolved},           {"artifacts", artifacts}};
  write_text(rc.out / "manifest.json", m.dump(2) + "\n");
}

DatasetRegistry load_registry(const RunConfig& rc) {
  require_exists(rc.registry, "registry");
  return DatasetRegistry::load(rc.registry);
}

std::vector<SaevalRecord> load_all(const std::vector<fs::path>& files, const DatasetRegistry& reg, const char* what) {
  if (files.empty()) throw ConfigError(std::string(what) + " path is required");
  std::vector<SaevalRecord> all;
  for (const auto& f : files) {
    require_exists(f, what);
    auto recs = load_corpus(f, reg);
    all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  return all;
}

// Model, vocabulary and registry from --checkpoint, or fresh ones sized for the corpus.
struct Loaded {
  std::optional<Checkpoint> ckpt;
  DatasetRegistry registry;
  std::optional<Vocab> vocab;
};

Loaded load_checkpoint_context(const RunConfig& rc, bool required) {
  Loaded l;
  if (!rc.checkpoint.empty() || required) {
    require_exists(rc.checkpoint, "checkpoint");
    l.ckpt = read_checkpoint(rc.checkpoint);
    l.vocab = vocab_from_checkpoint(*l.ckpt);
    l.registry = rc.registry.empty() ? registry_from_checkpoint(*l.ckpt) : load_registry(rc);
  } else {
    l.registry = load_registry(rc);
  }
  return l;
}

int cmd_validate(const RunConfig& rc) {
  const DatasetRegistry reg = load_registry(rc);
  if (rc.corpus.empty()) throw ConfigError("corpus path is required");
  json counts = json::object();
  std::size_t total = 0;
  for (const auto& f : rc.corpus) {
    require_exists(f, "corpus");
    const auto recs = load_corpus(f, reg);
    std::cout << f.string() << ": " << recs.size() << " records\n";
    counts[f.string()] = recs.size();
    total += recs.size();
  }
  std::cout << "total: " << total << " records, " << reg.size() << " datasets\n";
  write_manifest(rc, {{"record_counts", counts}});
  return 0;
}

int cmd_train(const RunConfig& rc, Stage stage) {
  Loaded l = load_checkpoint_context(rc, stage == Stage::Pretrain2);
  const auto corpus = load_all(rc.corpus, l.registry, "corpus");
  std::vector<SaevalRecord> validation;
  if (!rc.validation.empty()) validation = load_all(rc.validation, l.registry, "validation");
  if (!l.vocab) l.vocab = Vocab::build(corpus, l.registry);
  Model init = l.ckpt ? model_from_checkpoint(*l.ckpt) : Model(model_config_for(*l.vocab, l.registry, [&] {
    json m = rc.model;
    if (!m.contains("init_seed")) m["init_seed"] = rc.seed;
    return m;
  }()));
  std::optional<Checkpoint> resume;
  if (!rc.resume.empty()) {
    require_exists(rc.resume, "resume");
    resume = read_checkpoint(rc.resume);
    init = model_from_checkpoint(*resume);
    l.vocab = vocab_from_checkpoint(*resume);
  }
  TrainConfig tc = rc.train;
  tc.stage = stage;
  TrainInputs in{&corpus, &l.registry, &*l.vocab, validation.empty() ? nullptr : &validation, rc.out};
  const TrainResult r = train(in, tc, std::move(init), resume ? &*resume : nullptr);
  if (!r.log.empty()) {
    const auto& last = r.log.back();
    std::cout << to_string(stage) << ": " << r.log.size() << " steps, final loss " << last.loss.total << "\n";
  } else {
    std::cout << to_string(stage) << ": no steps run\n";
  }
  std::cout << "checkpoint: " << (rc.out / "checkpoint.ckpt").string() << "\n";
  json artifacts = {{"checkpoint", "checkpoint.ckpt"}, {"metrics", "metrics.jsonl"}};
  if (stage == Stage::Finetune) artifacts["validation"] = "validation.jsonl";
  write_manifest(rc, artifacts);
  return 0;
}

int cmd_eval(const RunConfig& rc) {
  Loaded l = load_checkpoint_context(rc, true);
  const auto corpus = load_all(rc.corpus, l.registry, "corpus");
  Model m = model_from_checkpoint(*l.ckpt);
  const auto results = evaluate(m, corpus, *l.vocab, l.registry, rc.train.max_new_tokens);
  const std::string table = format_eval_table(results);
  std::cout << table;
  json j = {{"seed", rc.seed}, {"checkpoint", rc.checkpoint.string()}, {"results", json::array()}};
  for (const auto& r : results) j["results"].push_back(r.to_json());
  fs::create_directories(rc.out);
  write_text(rc.out / "eval.json", j.dump(2) + "\n");
  write_text(rc.out / "eval.txt", table);
  write_manifest(rc, {{"eval", "eval.json"}, {"table", "eval.txt"}});
  return 0;
}

int cmd_export(const RunConfig& rc) {
  Loaded l = load_checkpoint_context(rc, true);
  const auto corpus = load_all(rc.corpus, l.registry, "corpus");
  Model m = model_from_checkpoint(*l.ckpt);
  const auto rows = export_embeddings(m, corpus, *l.vocab, l.registry);
  fs::create_directories(rc.out);
  write_embeddings(rc.out / "embeddings.jsonl", rows);
  std::cout << rows.size() << " embeddings written to " << (rc.out / "embeddings.jsonl").string() << "\n";
  write_manifest(rc, {{"embeddings", "embeddings.jsonl"}});
  return 0;
}

int cmd_bias(const RunConfig& rc) {
  AccuracyMatrix m;
  if (!rc.embeddings.empty()) {
    require_exists(rc.embeddings, "embeddings");
    const auto rows = read_embeddings(rc.embeddings);
    std::vector<std::string> ds = rc.datasets;
    if (ds.empty())
      for (const auto& r : rows)
        if (std::find(ds.begin(), ds.end(), r.dataset_id) == ds.end()) ds.push_back(r.dataset_id);
    LabelCorrespondence corr;
    if (!rc.correspondence.empty()) {
      require_exists(rc.correspondence, "correspondence");
      corr = LabelCorrespondence::from_json(read_json_file(rc.correspondence));
    }
    m = accuracy_matrix(rows, ds, corr);
  } else {
    const fs::path p = rc.matrix.empty() ? fs::path(UNISA_DATA_DIR) / "subjective_bias_matrix.json" : rc.matrix;
    require_exists(p, "matrix");
    m = AccuracyMatrix::load(p);
  }
  const BiasReport r = bias_report(m);
  const std::string text = format_bias_report(m, r);
  std::cout << text << "\nPairwise subjective bias (%)\n";
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = i + 1; j < m.size(); ++j) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "  %s - %s: %.2f\n", m.datasets[i].c_str(), m.datasets[j].c_str(), r.sub[i][j]);
      std::cout << buf;
    }
  fs::create_directories(rc.out);
  json j = r.to_json();
  j["accuracy"] = m.to_json();
  j["seed"] = rc.seed;
  write_text(rc.out / "bias_report.json", j.dump(2) + "\n");
  write_text(rc.out / "bias_report.txt", text);
  write_manifest(rc, {{"report", "bias_report.json"}, {"table", "bias_report.txt"}});
  return 0;
}

int cmd_make_corpus(const RunConfig& rc, const std::vector<std::size_t>& sizes) {
  SyntheticOptions o;
  o.seed = rc.seed;
  if (!sizes.empty()) {
    if (sizes.size() != 4) throw ConfigError("--sizes needs four values (ABSA, MSA, ERC, CA)");
    for (std::size_t k = 0; k < 4; ++k) {
      if (sizes[k] == 0) throw ConfigError("every task needs at least one record");
      o.sizes[k] = sizes[k];
    }
  }
  const auto c = make_synthetic_corpus(o);
  write_synthetic_corpus(rc.out, c);
  std::cout << c.records.size() << " records written to " << (rc.out / "corpus.jsonl").string() << "\n";
  write_manifest(rc, {{"registry", "registry.json"}, {"corpus", "corpus.jsonl"}});
  return 0;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified multimodal sentiment analysis toolkit"};
  app.set_version_flag("--version", std::string(UNISA_VERSION));
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run configuration");
    sub->add_option("--seed", o.seed, "Random seed (overrides the config)");
    sub->add_option("--out", o.out, "Output directory");
  };
  auto data = [&](CLI::App* sub) {
    sub->add_option("--corpus", o.corpus, "Corpus JSONL file(s)");
    sub->add_option("--registry", o.registry, "Dataset registry JSON");
  };
  auto training = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint, "Initial checkpoint");
    sub->add_option("--resume", o.resume, "Continue the run stored in this checkpoint");
    sub->add_option("--max-steps", o.max_steps, "Number of optimizer steps (overrides epochs)");
    sub->add_option("--epochs", o.epochs, "Number of epochs");
  };

  auto* validate = app.add_subcommand("validate", "Validate corpus files against a registry");
  common(validate);
  data(validate);
  auto* p1 = app.add_subcommand("pretrain1", "Coarse-grained pre-training (MCM + SPP + CCL)");
  common(p1);
  data(p1);
  training(p1);
  auto* p2 = app.add_subcommand("pretrain2", "Fine-grained pre-training (MCM + CEP)");
  common(p2);
  data(p2);
  training(p2);
  auto* ft = app.add_subcommand("finetune", "Joint fine-tuning on all datasets");
  common(ft);
  data(ft);
  training(ft);
  ft->add_option("--validation", o.validation, "Validation corpus file(s)");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  common(ev);
  data(ev);
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate");
  auto* ex = app.add_subcommand("export-embeddings", "Dump pooled encoder representations");
  common(ex);
  data(ex);
  ex->add_option("--checkpoint", o.checkpoint, "Checkpoint to encode with");
  auto* bias = app.add_subcommand("bias-report", "Annotation and subjective bias tables");
  common(bias);
  bias->add_option("--matrix", o.matrix, "Accuracy matrix JSON (default: bundled fixture)");
  bias->add_option("--embeddings", o.embeddings, "Embedding dump to cross-annotate");
  bias->add_option("--correspondence", o.correspondence, "Label correspondence JSON");
  bias->add_option("--datasets", o.datasets, "Dataset order for the matrix");
  auto* mk = app.add_subcommand("make-corpus", "Write a small synthetic corpus and registry");
  common(mk);
  mk->add_option("--sizes", o.sizes, "Records per task: ABSA MSA ERC CA")->expected(4);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("config", e.what());
    return 2;
  }
  o.command = app.get_subcommands().front()->get_name();

  try {
    const RunConfig rc = resolve(o);
    if (o.command == "validate") return cmd_validate(rc);
    if (o.command == "pretrain1") return cmd_train(rc, Stage::Pretrain1);
    if (o.command == "pretrain2") return cmd_train(rc, Stage::Pretrain2);
    if (o.command == "finetune") return cmd_train(rc, Stage::Finetune);
    if (o.command == "eval") return cmd_eval(rc);
    if (o.command == "export-embeddings") return cmd_export(rc);
    if (o.command == "bias-report") return cmd_bias(rc);
    if (o.command == "make-corpus") return cmd_make_corpus(rc, o.sizes);
    print_error("config", "unknown command " + o.command);
    return 2;
  } catch (const ConfigError& e) {
    print_error(e.kind(), e.what());
    return 2;
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    print_error("io", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}
