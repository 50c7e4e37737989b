#include "unisa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <string>

#include "unisa/error.hpp"
#include "unisa/masking.hpp"

namespace unisa {

namespace {

struct Cue {
  const char* word;
  const char* label;
  double score;
};

// Each label owns two cue words; the rest of the sentence is filler.
const std::vector<Cue> kAbsaCues = {{"great", "positive", 0}, {"excellent", "positive", 0},
                                    {"awful", "negative", 0}, {"broken", "negative", 0},
                                    {"okay", "neutral", 0},   {"average", "neutral", 0}};
const std::vector<Cue> kMsaCues = {{"wonderful", "", 2.5}, {"nice", "", 1.2},  {"fine", "", 0.3},
                                   {"boring", "", -1.1},   {"horrible", "", -2.6}, {"dreadful", "", -2.2}};
const std::vector<Cue> kErcCues = {{"yay", "joy", 0},       {"awesome", "joy", 0},   {"cry", "sadness", 0},
                                   {"miss", "sadness", 0},  {"furious", "anger", 0}, {"stop", "anger", 0},
                                   {"sure", "neutral", 0},  {"maybe", "neutral", 0}};
const std::vector<Cue> kCaCues = {{"delightful", "positive", 0}, {"charming", "positive", 0},
                                  {"tedious", "negative", 0},    {"clumsy", "negative", 0}};

const std::vector<const char*> kAspects = {"battery", "screen", "keyboard", "service", "food", "price"};
const std::vector<const char*> kSubjects = {"the movie", "this film", "the story", "the acting", "the ending"};
const std::vector<const char*> kContext = {"how was your day", "did you see that", "we need to talk",
                                           "the meeting is moved", "look at this"};

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(uniform01(rng) * n); }

FeaturePtr random_features(std::mt19937_64& rng, std::size_t dim, double shift) {
  FeatureMatrix m;
  m.rows = 2 + pick(rng, 3);
  m.cols = dim;
  m.values.resize(m.rows * m.cols);
  for (double& v : m.values) v = std::round((shift + uniform01(rng) - 0.5) * 1000.0) / 1000.0;
  return std::make_shared<const FeatureMatrix>(std::move(m));
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& o) {
  std::vector<DatasetSpec> ds;
  ds.push_back({"ToyABSA", TaskType::ABSA, {"positive", "negative", "neutral"}, 0, 0, {"WA"}, {}, {}});
  ds.push_back({"ToyMSA", TaskType::MSA, {}, o.acoustic_dim, o.visual_dim, {"MAE", "ACC7", "ACC2"}, {}, {}});
  ds.push_back({"ToyERC", TaskType::ERC, {"neutral", "joy", "sadness", "anger"}, o.acoustic_dim, o.visual_dim,
                {"WA", "WF1"}, std::string("neutral"), {}});
  ds.push_back({"ToyCA", TaskType::CA, {"positive", "negative"}, 0, 0, {"WA"}, {}, {}});
  SyntheticCorpus c{DatasetRegistry(std::move(ds)), {}};

  std::mt19937_64 rng(o.seed);
  for (TaskType t : kAllTasks) {
    const std::size_t n = o.sizes[static_cast<std::size_t>(t)];
    for (std::size_t i = 0; i < n; ++i) {
      SaevalRecord r;
      r.task_type = t;
      switch (t) {
        case TaskType::ABSA: {
          // Cycling through cues keeps every label represented in small corpora.
          const Cue& cue = kAbsaCues[(i * 2 + pick(rng, 2)) % kAbsaCues.size()];
          r.dataset_id = "ToyABSA";
          r.text = std::string("the ") + kAspects[pick(rng, kAspects.size())] + " is " + cue.word;
          r.label = std::string(cue.label);
          break;
        }
        case TaskType::MSA: {
          const Cue& cue = kMsaCues[i % kMsaCues.size()];
          r.dataset_id = "ToyMSA";
          r.text = std::string(kSubjects[pick(rng, kSubjects.size())]) + " felt " + cue.word;
          const double jitter = std::round((uniform01(rng) - 0.5) * 4.0) / 10.0;
          r.label = std::clamp(std::round((cue.score + jitter) * 10.0) / 10.0, -3.0, 3.0);
          if (o.acoustic_dim) r.audio = random_features(rng, o.acoustic_dim, cue.score / 3.0);
          if (o.visual_dim) r.image = random_features(rng, o.visual_dim, -cue.score / 3.0);
          break;
        }
        case TaskType::ERC: {
          const Cue& cue = kErcCues[(i * 2 + pick(rng, 2)) % kErcCues.size()];
          r.dataset_id = "ToyERC";
          const std::size_t turns = 1 + pick(rng, 2);
          for (std::size_t k = 0; k < turns; ++k) {
            r.context.push_back({std::to_string(k % 2), kContext[pick(rng, kContext.size())]});
          }
          r.speaker_id = std::to_string(turns % 2);
          r.utterance_index = turns;
          r.text = std::string("oh ") + cue.word + " really";
          r.label = std::string(cue.label);
          if (o.acoustic_dim && pick(rng, 2)) r.audio = random_features(rng, o.acoustic_dim, 0.0);
          break;
        }
        case TaskType::CA: {
          const Cue& cue = kCaCues[(i * 2 + pick(rng, 2)) % kCaCues.size()];
          r.dataset_id = "ToyCA";
          r.text = std::string(kSubjects[pick(rng, kSubjects.size())]) + " was " + cue.word;
          r.label = std::string(cue.label);
          break;
        }
      }
      validate_record(r, c.registry);
      c.records.push_back(std::move(r));
    }
  }
  return c;
}

void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir);
  std::ofstream reg(dir / "registry.json", std::ios::binary);
  if (!reg) throw DataError("cannot write " + (dir / "registry.json").string());
  reg << corpus.registry.to_json().dump(2) << '\n';
  save_corpus(dir / "corpus.jsonl", corpus.records);
}

}  // namespace unisa
