#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <string_view>
#include <vector>

#include "unisa/data.hpp"
#include "unisa/prompt.hpp"

namespace unisa {

// Text is always present; the suffix lists the retained non-text modalities.
enum class ModalitySetting { T, TA, TV, TAV };
inline constexpr std::array<ModalitySetting, 4> kAllSettings = {ModalitySetting::T, ModalitySetting::TA,
                                                                ModalitySetting::TV, ModalitySetting::TAV};

std::string_view to_string(ModalitySetting s);
bool keeps(ModalitySetting s, Modality m);
std::vector<ModalitySetting> available_settings(bool has_acoustic, bool has_visual);

struct MaskPlan {
  ModalitySetting setting = ModalitySetting::T;
  // Sorted indices into PromptSequence::flatten().
  std::vector<std::size_t> masked_token_positions;
  // Sorted frame indices per modality, counted across that modality's segments.
  std::array<std::vector<std::size_t>, 2> masked_frames;

  const std::vector<std::size_t>& frames(Modality m) const { return masked_frames[static_cast<std::size_t>(m)]; }
  bool empty() const;
};

// Uniform in [0, 1) from 53 random bits; identical across standard libraries.
double uniform01(std::mt19937_64& rng);

ModalitySetting sample_modal_setting(const SaevalRecord& record, std::mt19937_64& rng);
PromptSequence apply_modal_setting(PromptSequence prompt, ModalitySetting setting);

// Flattened positions the MCM objective may corrupt: context words and query words,
// never Z, Y, <query>, speaker markers or other specials.
std::vector<std::size_t> eligible_token_positions(const PromptSequence& prompt);

MaskPlan sample_mcm_plan(const PromptSequence& prompt, double p_mask, std::mt19937_64& rng);

}  // namespace unisa
