#include "unisa/prompt.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "unisa/error.hpp"

namespace unisa {

namespace {

const char* const kFixedTokens[Vocab::kNumFixed] = {"<pad>", "<unk>", "<bos>", "<eos>", "<mask>", "<sep>", "<ans>",
                                                    "</ans>", "<query>", "<task_ABSA>", "<task_MSA>", "<task_ERC>",
                                                    "<task_CA>"};

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

bool is_printable_ascii(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x21 && u <= 0x7e;
}

std::string speaker_name(std::size_t k) { return "<speaker_" + std::to_string(k) + ">"; }

enum class Piece { Word, Continuation, Punct };

Piece piece_kind(const std::string& tok) {
  if (tok.size() > 2 && tok[0] == '#' && tok[1] == '#') return Piece::Continuation;
  return is_word_char(tok[0]) ? Piece::Word : Piece::Punct;
}

// Splits text into word runs and single punctuation characters (whitespace dropped).
template <typename OnWord, typename OnPunct, typename OnOther>
void segment(std::string_view text, OnWord on_word, OnPunct on_punct, OnOther on_other) {
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (is_space(c)) {
      ++i;
    } else if (is_word_char(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word_char(text[j])) ++j;
      on_word(text.substr(i, j - i));
      i = j;
    } else if (is_printable_ascii(c)) {
      on_punct(c);
      ++i;
    } else {
      std::size_t j = i + 1;
      // Swallow UTF-8 continuation bytes so one code point maps to one token.
      while (j < text.size() && (static_cast<unsigned char>(text[j]) & 0xC0) == 0x80) ++j;
      on_other(text.substr(i, j - i));
      i = j;
    }
  }
}

}  // namespace

// --- Vocab ---------------------------------------------------------------------------

void Vocab::index() {
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) throw VocabError("duplicate token '" + tokens_[i] + "'");
  }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  if (tokens.size() < static_cast<std::size_t>(kNumFixed)) throw VocabError("vocabulary is missing the fixed special tokens");
  for (int i = 0; i < kNumFixed; ++i) {
    if (tokens[static_cast<std::size_t>(i)] != kFixedTokens[i]) {
      throw VocabError("vocabulary line " + std::to_string(i) + " should be " + kFixedTokens[i]);
    }
  }
  std::size_t pos = kNumFixed;
  while (pos < tokens.size() && tokens[pos] == speaker_name(v.max_speakers_)) {
    ++v.max_speakers_;
    ++pos;
  }
  while (pos < tokens.size() && tokens[pos].rfind("<data:", 0) == 0) {
    ++v.num_datasets_;
    ++pos;
  }
  v.first_regular_ = static_cast<int>(pos);
  for (; pos < tokens.size(); ++pos) {
    if (tokens[pos].empty()) throw VocabError("empty token at line " + std::to_string(pos));
  }
  v.tokens_ = std::move(tokens);
  v.index();
  return v;
}

Vocab Vocab::build(const std::vector<SaevalRecord>& records, const DatasetRegistry& registry, std::size_t max_speakers,
                   std::size_t min_count) {
  std::vector<std::string> toks(kFixedTokens, kFixedTokens + kNumFixed);
  for (std::size_t k = 0; k < max_speakers; ++k) toks.push_back(speaker_name(k));
  for (const DatasetSpec& d : registry.datasets()) toks.push_back("<data:" + d.id + ">");

  std::set<std::string> have;
  auto push = [&](const std::string& t) {
    if (have.insert(t).second) toks.push_back(t);
  };
  for (int c = 0x21; c <= 0x7e; ++c) {
    const char ch = static_cast<char>(c);
    push(std::string(1, ch));
    if (is_word_char(ch)) push(std::string("##") + ch);
  }
  for (Polarity p : kAllPolarities) push(std::string(to_string(p)));
  for (const std::string& l : kScoreBinLabels) push(l);
  for (const DatasetSpec& d : registry.datasets()) {
    for (const std::string& l : d.answer_set) push(l);
  }

  std::map<std::string, std::size_t> counts;
  auto count_text = [&](std::string_view text) {
    segment(text, [&](std::string_view w) { ++counts[std::string(w)]; }, [](char) {}, [](std::string_view) {});
  };
  for (const SaevalRecord& r : records) {
    count_text(r.text);
    for (const ContextTurn& t : r.context) count_text(t.text);
  }
  std::vector<std::pair<std::string, std::size_t>> words(counts.begin(), counts.end());
  std::stable_sort(words.begin(), words.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [w, n] : words) {
    if (n >= min_count) push(w);
  }
  return from_tokens(std::move(toks));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw VocabError("cannot open vocabulary " + path.string());
  std::vector<std::string> toks;
  std::string line;
  while (std::getline(in, line)) toks.push_back(line);
  return from_tokens(std::move(toks));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VocabError("cannot write vocabulary " + path.string());
  for (const std::string& t : tokens_) out << t << '\n';
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw IndexError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocab::find(std::string_view token) const {
  if (auto it = ids_.find(std::string(token)); it != ids_.end()) return it->second;
  return std::nullopt;
}

int Vocab::id(std::string_view token) const {
  if (auto v = find(token)) return *v;
  throw VocabError("token '" + std::string(token) + "' is not in the vocabulary");
}

int Vocab::speaker_token(std::size_t k) const {
  if (k >= max_speakers_) {
    throw VocabError("speaker " + std::to_string(k) + " outside the reserved range of " + std::to_string(max_speakers_));
  }
  return kNumFixed + static_cast<int>(k);
}

int Vocab::dataset_token(std::size_t dataset_index) const {
  if (dataset_index >= num_datasets_) throw VocabError("dataset index " + std::to_string(dataset_index) + " has no token");
  return kNumFixed + static_cast<int>(max_speakers_ + dataset_index);
}

bool Vocab::is_speaker_token(int id) const {
  return id >= kNumFixed && id < kNumFixed + static_cast<int>(max_speakers_);
}

bool Vocab::is_dataset_token(int id) const {
  const int base = kNumFixed + static_cast<int>(max_speakers_);
  return id >= base && id < base + static_cast<int>(num_datasets_);
}

std::vector<int> Vocab::tokenize(std::string_view text) const {
  std::vector<int> out;
  auto lookup = [&](const std::string& t) {
    auto it = ids_.find(t);
    return it == ids_.end() ? static_cast<int>(kUnk) : it->second;
  };
  segment(
      text,
      [&](std::string_view w) {
        if (auto it = ids_.find(std::string(w)); it != ids_.end() && it->second >= first_regular_) {
          out.push_back(it->second);
          return;
        }
        out.push_back(lookup(std::string(1, w[0])));
        for (std::size_t i = 1; i < w.size(); ++i) out.push_back(lookup(std::string("##") + w[i]));
      },
      [&](char c) { out.push_back(lookup(std::string(1, c))); },
      [&](std::string_view other) { out.push_back(other == kQuerySeparator ? static_cast<int>(kSep) : static_cast<int>(kUnk)); });
  return out;
}

std::string Vocab::detokenize(std::span<const int> ids) const {
  std::string out;
  bool prev_wordish = false;
  for (int id : ids) {
    if (is_special(id) || id == kUnk) continue;
    const std::string& tok = token(id);
    switch (piece_kind(tok)) {
      case Piece::Word:
        if (prev_wordish) out.push_back(' ');
        out += tok;
        prev_wordish = true;
        break;
      case Piece::Continuation:
        out += tok.substr(2);
        prev_wordish = true;
        break;
      case Piece::Punct:
        out += tok;
        prev_wordish = false;
        break;
    }
  }
  return out;
}

// --- labels --------------------------------------------------------------------------

AnswerSet answer_set_for(const DatasetSpec& dataset) {
  AnswerSet a;
  a.scalar = dataset.is_regression();
  a.labels = dataset.answer_set;
  return a;
}

std::string render_label(const LabelValue& label) {
  if (const auto* s = std::get_if<std::string>(&label)) return *s;
  double v = std::round(std::get<double>(label) * 10.0) / 10.0;
  if (v == 0.0) v = 0.0;  // folds -0.0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f", v);
  return buf;
}

int score_bin(double score) {
  const double r = std::round(score);  // half away from zero
  return static_cast<int>(std::clamp(r, -3.0, 3.0));
}

const std::string& score_bin_label(double score) {
  return kScoreBinLabels[static_cast<std::size_t>(score_bin(score) + 3)];
}

// --- prompts -------------------------------------------------------------------------

std::vector<int> PromptSequence::flatten() const {
  std::vector<int> out;
  out.reserve(token_count());
  out.insert(out.end(), z_tokens.begin(), z_tokens.end());
  out.insert(out.end(), y_tokens.begin(), y_tokens.end());
  for (const auto& u : x_context) out.insert(out.end(), u.begin(), u.end());
  out.push_back(Vocab::kQuery);
  out.insert(out.end(), x_tokens.begin(), x_tokens.end());
  return out;
}

std::size_t PromptSequence::token_count() const {
  std::size_t n = z_tokens.size() + y_tokens.size() + 1 + x_tokens.size();
  for (const auto& u : x_context) n += u.size();
  return n;
}

std::size_t PromptSequence::frame_count() const {
  std::size_t n = 0;
  for (const ModalSegment& s : modal_segments) n += s.frames ? s.frames->rows : 0;
  return n;
}

bool PromptSequence::has_modality(Modality m) const {
  return std::any_of(modal_segments.begin(), modal_segments.end(), [m](const ModalSegment& s) { return s.modality == m; });
}

PromptSequence resegment(std::span<const int> flat, const Vocab& vocab) {
  PromptSequence p;
  std::size_t i = 0;
  while (i < flat.size() && flat[i] != Vocab::kAnsOpen) {
    const int t = flat[i];
    if (vocab.is_dataset_token(t)) p.dataset_index = static_cast<std::size_t>(t - vocab.dataset_token(0));
    p.z_tokens.push_back(t);
    ++i;
  }
  if (i == flat.size()) throw ContractError("resegment: no answer-set span");
  while (i < flat.size()) {
    p.y_tokens.push_back(flat[i]);
    if (flat[i++] == Vocab::kAnsClose) break;
  }
  if (p.y_tokens.back() != Vocab::kAnsClose) throw ContractError("resegment: unterminated answer-set span");
  while (i < flat.size() && flat[i] != Vocab::kQuery) {
    if (!vocab.is_speaker_token(flat[i])) throw ContractError("resegment: context utterance without a speaker token");
    std::vector<int> utt{flat[i++]};
    while (i < flat.size() && flat[i] != Vocab::kQuery && !vocab.is_speaker_token(flat[i])) utt.push_back(flat[i++]);
    p.x_context.push_back(std::move(utt));
  }
  if (i == flat.size()) throw ContractError("resegment: missing <query> marker");
  p.x_tokens.assign(flat.begin() + static_cast<std::ptrdiff_t>(i + 1), flat.end());
  return p;
}

namespace {

std::size_t parse_speaker(const std::string& s) {
  std::size_t k = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), k);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw VocabError("speaker id '" + s + "' is not a non-negative integer");
  }
  return k;
}

}  // namespace

PromptSequence build_prompt(const SaevalRecord& record, const Vocab& vocab, const DatasetRegistry& registry,
                            std::size_t max_len) {
  PromptSequence p;
  const DatasetSpec& ds = registry.at(record.dataset_id);
  p.dataset_index = registry.index_of(record.dataset_id);
  if (p.dataset_index >= vocab.num_datasets()) throw VocabError("vocabulary lacks a token for dataset '" + ds.id + "'");

  p.z_tokens = {vocab.task_token(record.task_type), vocab.dataset_token(p.dataset_index)};
  if (record.speaker_id) p.z_tokens.push_back(vocab.speaker_token(parse_speaker(*record.speaker_id)));

  p.y_tokens.push_back(Vocab::kAnsOpen);
  const std::vector<std::string> shown = ds.is_regression() ? std::vector<std::string>{"-3.0", "+3.0"} : ds.answer_set;
  for (std::size_t i = 0; i < shown.size(); ++i) {
    if (i) {
      const auto bar = vocab.tokenize("|");
      p.y_tokens.insert(p.y_tokens.end(), bar.begin(), bar.end());
    }
    const auto t = vocab.tokenize(shown[i]);
    p.y_tokens.insert(p.y_tokens.end(), t.begin(), t.end());
  }
  p.y_tokens.push_back(Vocab::kAnsClose);

  for (const ContextTurn& turn : record.context) {
    std::vector<int> utt{vocab.speaker_token(parse_speaker(turn.speaker_id))};
    const auto t = vocab.tokenize(turn.text);
    utt.insert(utt.end(), t.begin(), t.end());
    p.x_context.push_back(std::move(utt));
  }
  p.x_tokens = vocab.tokenize(record.text);
  if (record.audio) p.modal_segments.push_back({Modality::Acoustic, record.audio});
  if (record.image) p.modal_segments.push_back({Modality::Visual, record.image});

  while (p.stream_length() > max_len && !p.x_context.empty()) {
    p.x_context.erase(p.x_context.begin());
    p.truncated = true;
  }
  if (p.stream_length() > max_len) {
    const std::size_t excess = p.stream_length() - max_len;
    if (excess > p.x_tokens.size()) {
      throw ContractError("prompt needs " + std::to_string(p.stream_length()) + " positions even without text; max_len is " +
                          std::to_string(max_len));
    }
    p.x_tokens.resize(p.x_tokens.size() - excess);
    p.truncated = true;
  }
  return p;
}

// --- decoding ------------------------------------------------------------------------

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

DecodedLabel decode_text(std::string_view raw, const AnswerSet& answers) {
  const auto first = raw.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) throw DecodeError("empty generation");
  const auto last = raw.find_last_not_of(" \t\r\n");
  std::string text(raw.substr(first, last - first + 1));

  if (answers.scalar) {
    // Accept U+2212 MINUS SIGN as well as ASCII '-'.
    for (std::size_t pos; (pos = text.find("\xE2\x88\x92")) != std::string::npos;) text.replace(pos, 3, "-");
    std::string compact;
    for (char c : text)
      if (!is_space(c)) compact.push_back(c);
    const char* begin = compact.c_str();
    if (!compact.empty() && compact[0] == '+') ++begin;
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (begin == compact.c_str() + compact.size() || end != compact.c_str() + compact.size() || !std::isfinite(v)) {
      return {0.0, true};
    }
    return {std::clamp(v, -3.0, 3.0), false};
  }

  if (answers.labels.empty()) throw DecodeError("answer set is empty");
  for (const std::string& l : answers.labels) {
    if (l == text) return {l, false};
  }
  std::size_t best = 0, best_d = edit_distance(text, answers.labels[0]);
  for (std::size_t i = 1; i < answers.labels.size(); ++i) {
    const std::size_t d = edit_distance(text, answers.labels[i]);
    if (d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return {answers.labels[best], true};
}

DecodedLabel decode_label(std::span<const int> generated, const AnswerSet& answers, const Vocab& vocab) {
  auto end = std::find(generated.begin(), generated.end(), static_cast<int>(Vocab::kEos));
  const std::vector<int> body(generated.begin(), end);
  if (body.empty()) throw DecodeError("empty generation");
  return decode_text(vocab.detokenize(body), answers);
}

}  // namespace unisa
