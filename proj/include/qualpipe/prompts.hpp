#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace qualpipe {

using SlotValues = std::map<std::string, std::string, std::less<>>;

// Single-pass {{slot}} substitution. Substituted text is never rescanned.
// Throws InputError for a slot with no value or an unterminated "{{".
std::string render_template(std::string_view tmpl, const SlotValues& slots);

struct PromptTemplates {
  std::string generation;
  std::string classification;
  std::string aggregation;
  std::string prevalence;

  static PromptTemplates builtin();
  // Reads <dir>/{generation,classification,aggregation,prevalence}.txt;
  // a missing file falls back to the built-in template.
  static PromptTemplates from_dir(const std::filesystem::path& dir);

  // Hash over all four templates, used for stage fingerprints.
  std::string fingerprint() const;
};

}  // namespace qualpipe
