#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "unisa/data.hpp"

namespace unisa {

// Small four-task corpus whose labels are planted through cue words, for smoke runs and tests.
struct SyntheticOptions {
  std::uint64_t seed = 0;
  // Records per task, indexed by TaskType.
  std::array<std::size_t, 4> sizes = {4, 4, 4, 4};
  std::size_t acoustic_dim = 16;
  std::size_t visual_dim = 16;
};

struct SyntheticCorpus {
  DatasetRegistry registry;
  std::vector<SaevalRecord> records;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options = {});

// Writes registry.json and corpus.jsonl into dir (created if needed).
void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

}  // namespace unisa
