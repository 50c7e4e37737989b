#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "unisa/data.hpp"

namespace unisa {

// Token table. Layout: fixed specials, <speaker_k> block, <data:ID> block, then
// ordinary tokens (single ASCII chars, "##c" continuations, label words, corpus words).
class Vocab {
 public:
  enum : int { kPad = 0, kUnk, kBos, kEos, kMask, kSep, kAnsOpen, kAnsClose, kQuery, kTaskBase };
  static constexpr int kNumFixed = kTaskBase + 4;

  static Vocab build(const std::vector<SaevalRecord>& records, const DatasetRegistry& registry,
                     std::size_t max_speakers = 16, std::size_t min_count = 1);
  static Vocab from_tokens(std::vector<std::string> tokens);
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const;
  std::optional<int> find(std::string_view token) const;
  int id(std::string_view token) const;

  int task_token(TaskType t) const { return kTaskBase + static_cast<int>(t); }
  int speaker_token(std::size_t k) const;
  int dataset_token(std::size_t dataset_index) const;
  std::size_t max_speakers() const { return max_speakers_; }
  std::size_t num_datasets() const { return num_datasets_; }
  // Specials occupy ids below first_regular(); the tokenizer never emits them (except
  // <sep> for the internal query separator and <unk>).
  bool is_special(int id) const { return id >= 0 && id < first_regular_; }
  int first_regular() const { return first_regular_; }
  bool is_speaker_token(int id) const;
  bool is_dataset_token(int id) const;

  std::vector<int> tokenize(std::string_view text) const;
  std::string detokenize(std::span<const int> ids) const;

 private:
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::size_t max_speakers_ = 0;
  std::size_t num_datasets_ = 0;
  int first_regular_ = 0;
};

// Ordered label strings of one dataset, or the signed-decimal rule for MSA.
struct AnswerSet {
  std::vector<std::string> labels;
  bool scalar = false;
};

AnswerSet answer_set_for(const DatasetSpec& dataset);

// Text the decoder is trained to emit for a label: the label string, or "%+.1f" for scores.
std::string render_label(const LabelValue& label);

// Seven ACC-7 bins as word labels, from -3 to +3.
inline const std::vector<std::string> kScoreBinLabels = {"very_negative", "negative", "weakly_negative", "neutral",
                                                         "weakly_positive", "positive", "very_positive"};
int score_bin(double score);
const std::string& score_bin_label(double score);

enum class Modality { Acoustic, Visual };

struct ModalSegment {
  Modality modality = Modality::Acoustic;
  FeaturePtr frames;
};

// L = {Z, Y, X}. Flattened as  Z  <ans> ... </ans>  (<speaker_k> utterance)*  <query> text.
// Modal frames follow the flattened tokens inside the encoder stream.
struct PromptSequence {
  std::vector<int> z_tokens;
  std::vector<int> y_tokens;
  std::vector<std::vector<int>> x_context;
  std::vector<int> x_tokens;
  std::vector<ModalSegment> modal_segments;
  std::size_t dataset_index = 0;
  bool truncated = false;

  std::vector<int> flatten() const;
  std::size_t token_count() const;
  std::size_t frame_count() const;
  std::size_t stream_length() const { return token_count() + frame_count(); }
  // First flattened position after Z and Y.
  std::size_t x_begin() const { return z_tokens.size() + y_tokens.size(); }
  bool has_modality(Modality m) const;
};

// Inverse of flatten() on the token spans; dataset_index comes back from the <data:ID> token.
PromptSequence resegment(std::span<const int> flat, const Vocab& vocab);

PromptSequence build_prompt(const SaevalRecord& record, const Vocab& vocab, const DatasetRegistry& registry,
                            std::size_t max_len = 128);

struct DecodedLabel {
  LabelValue label;
  // Set when the label came from the nearest-answer or unparseable-score path.
  bool fallback = false;
};

DecodedLabel decode_text(std::string_view text, const AnswerSet& answers);
DecodedLabel decode_label(std::span<const int> generated, const AnswerSet& answers, const Vocab& vocab);

std::size_t edit_distance(std::string_view a, std::string_view b);

}  // namespace unisa
