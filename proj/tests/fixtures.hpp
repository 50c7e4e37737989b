#pragma once

// Small shared fixtures for the unit tests.

#include <filesystem>
#include <random>
#include <string>

#include "unisa/data.hpp"

namespace unisa::testing {

inline DatasetRegistry small_registry(std::size_t acoustic = 4, std::size_t visual = 3) {
  std::vector<DatasetSpec> ds;
  ds.push_back({"Laptop", TaskType::ABSA, {"positive", "negative", "neutral", "conflict"}, 0, 0, {"WA"}, {}, {}});
  ds.push_back({"MOSI", TaskType::MSA, {}, acoustic, visual, {"MAE", "ACC7", "ACC2"}, {}, {}});
  ds.push_back({"MELD", TaskType::ERC,
                {"neutral", "joy", "sadness", "anger", "surprise", "fear", "disgust"},
                acoustic, visual, {"WA", "WF1"}, std::string("neutral"), {}});
  ds.push_back({"SST2", TaskType::CA, {"positive", "negative"}, 0, 0, {"WA"}, {}, {}});
  return DatasetRegistry(std::move(ds));
}

inline FeaturePtr features(std::size_t rows, std::size_t cols, double base = 0.0) {
  FeatureMatrix m;
  m.rows = rows;
  m.cols = cols;
  for (std::size_t i = 0; i < rows * cols; ++i) m.values.push_back(base + 0.25 * static_cast<double>(i));
  return std::make_shared<FeatureMatrix>(std::move(m));
}

inline SaevalRecord ca_record(std::string text, std::string label) {
  SaevalRecord r;
  r.task_type = TaskType::CA;
  r.dataset_id = "SST2";
  r.text = std::move(text);
  r.label = std::move(label);
  return r;
}

inline SaevalRecord erc_record() {
  SaevalRecord r;
  r.task_type = TaskType::ERC;
  r.dataset_id = "MELD";
  r.text = "Oh my God, that is so great!";
  r.context = {{"0", "I got the job."}, {"1", "Wait, which one?"}};
  r.speaker_id = "1";
  r.utterance_index = 2;
  r.label = std::string("joy");
  return r;
}

inline SaevalRecord msa_record(double score = 1.4, bool with_audio = true, bool with_image = true) {
  SaevalRecord r;
  r.task_type = TaskType::MSA;
  r.dataset_id = "MOSI";
  r.text = "it was pretty good actually";
  if (with_audio) r.audio = features(5, 4);
  if (with_image) r.image = features(3, 3, 1.0);
  r.label = score;
  return r;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("unisa_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace unisa::testing
