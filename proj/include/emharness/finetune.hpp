#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "emharness/promptkit.hpp"
#include "emharness/records.hpp"

namespace emh::records {

/// Writes one chat record per pair: the rendered zero-shot prompt as user
/// turn(s) and "Yes" / "No" as assistant target. Returns the number of
/// records written.
inline std::size_t export_finetune_dataset(const Dataset& dataset, const prompts::PromptDesign& design,
                                           std::ostream& out) {
  if (design.format != prompts::OutputFormat::Force)
    throw ConfigError("fine-tuning export needs a force-format design, got '" + design.name + "'");
  std::size_t n = 0;
  for (const auto& pair : dataset.pairs) {
    auto conv = prompts::render_match_prompt(design, pair);
    conv.add(Role::Assistant, pair.gold == Label::Match ? "Yes" : "No");
    nlohmann::json rec = {{"messages", to_json(conv)}};
    out << rec.dump() << '\n';
    ++n;
  }
  return n;
}

inline std::size_t export_finetune_dataset(const Dataset& dataset, const prompts::PromptDesign& design,
                                           const std::filesystem::path& path) {
  if (design.format != prompts::OutputFormat::Force)
    throw ConfigError("fine-tuning export needs a force-format design, got '" + design.name + "'");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return export_finetune_dataset(dataset, design, out);
}

}  // namespace emh::records
