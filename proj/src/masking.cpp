#include "unisa/masking.hpp"

#include <algorithm>

#include "unisa/error.hpp"

namespace unisa {

std::string_view to_string(ModalitySetting s) {
  switch (s) {
    case ModalitySetting::T: return "T";
    case ModalitySetting::TA: return "TA";
    case ModalitySetting::TV: return "TV";
    case ModalitySetting::TAV: return "TAV";
  }
  return "?";
}

bool keeps(ModalitySetting s, Modality m) {
  if (m == Modality::Acoustic) return s == ModalitySetting::TA || s == ModalitySetting::TAV;
  return s == ModalitySetting::TV || s == ModalitySetting::TAV;
}

std::vector<ModalitySetting> available_settings(bool has_acoustic, bool has_visual) {
  std::vector<ModalitySetting> out{ModalitySetting::T};
  if (has_acoustic) out.push_back(ModalitySetting::TA);
  if (has_visual) out.push_back(ModalitySetting::TV);
  if (has_acoustic && has_visual) out.push_back(ModalitySetting::TAV);
  return out;
}

bool MaskPlan::empty() const {
  return masked_token_positions.empty() && masked_frames[0].empty() && masked_frames[1].empty();
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

ModalitySetting sample_modal_setting(const SaevalRecord& record, std::mt19937_64& rng) {
  const auto options = available_settings(record.audio != nullptr, record.image != nullptr);
  if (options.size() == 1) return options[0];
  return options[rng() % options.size()];
}

PromptSequence apply_modal_setting(PromptSequence prompt, ModalitySetting setting) {
  for (Modality m : {Modality::Acoustic, Modality::Visual}) {
    if (keeps(setting, m) && !prompt.has_modality(m)) {
      throw ContractError(std::string("setting ") + std::string(to_string(setting)) + " needs a missing " +
                          (m == Modality::Acoustic ? "acoustic" : "visual") + " stream");
    }
  }
  std::erase_if(prompt.modal_segments, [setting](const ModalSegment& s) { return !keeps(setting, s.modality); });
  return prompt;
}

std::vector<std::size_t> eligible_token_positions(const PromptSequence& prompt) {
  std::vector<std::size_t> out;
  std::size_t pos = prompt.x_begin();
  for (const auto& utt : prompt.x_context) {
    for (std::size_t i = 0; i < utt.size(); ++i, ++pos) {
      if (i > 0 && utt[i] >= Vocab::kNumFixed) out.push_back(pos);
    }
  }
  ++pos;  // <query>
  for (std::size_t i = 0; i < prompt.x_tokens.size(); ++i, ++pos) {
    if (prompt.x_tokens[i] >= Vocab::kNumFixed) out.push_back(pos);
  }
  return out;
}

MaskPlan sample_mcm_plan(const PromptSequence& prompt, double p_mask, std::mt19937_64& rng) {
  if (!(p_mask >= 0.0 && p_mask <= 1.0)) throw ContractError("mask probability must lie in [0, 1]");
  MaskPlan plan;
  const bool a = prompt.has_modality(Modality::Acoustic), v = prompt.has_modality(Modality::Visual);
  plan.setting = a ? (v ? ModalitySetting::TAV : ModalitySetting::TA) : (v ? ModalitySetting::TV : ModalitySetting::T);
  for (std::size_t pos : eligible_token_positions(prompt)) {
    if (uniform01(rng) < p_mask) plan.masked_token_positions.push_back(pos);
  }
  std::array<std::size_t, 2> offset{0, 0};
  for (const ModalSegment& s : prompt.modal_segments) {
    auto& dst = plan.masked_frames[static_cast<std::size_t>(s.modality)];
    std::size_t& off = offset[static_cast<std::size_t>(s.modality)];
    const std::size_t rows = s.frames ? s.frames->rows : 0;
    for (std::size_t f = 0; f < rows; ++f) {
      if (uniform01(rng) < p_mask) dst.push_back(off + f);
    }
    off += rows;
  }
  return plan;
}

}  // namespace unisa
