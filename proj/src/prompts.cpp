#include "qualpipe/prompts.hpp"

#include <fstream>
#include <sstream>

#include "builtin_assets.hpp"
#include "qualpipe/error.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe {

std::string render_template(std::string_view tmpl, const SlotValues& slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) throw InputError("unterminated {{ in prompt template");
    auto name = tmpl.substr(open + 2, close - open - 2);
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw InputError("prompt template slot has no value: {{" + std::string(name) + "}}");
    }
    out += it->second;
    pos = close + 2;
  }
  return out;
}

PromptTemplates PromptTemplates::builtin() {
  return {assets::kGenerationPrompt, assets::kClassificationPrompt, assets::kAggregationPrompt,
          assets::kPrevalencePrompt};
}

PromptTemplates PromptTemplates::from_dir(const std::filesystem::path& dir) {
  auto t = builtin();
  auto load = [&](const char* name, std::string& slot) {
    std::ifstream in(dir / name);
    if (!in) return;
    std::stringstream ss;
    ss << in.rdbuf();
    slot = ss.str();
  };
  load("generation.txt", t.generation);
  load("classification.txt", t.classification);
  load("aggregation.txt", t.aggregation);
  load("prevalence.txt", t.prevalence);
  return t;
}

std::string PromptTemplates::fingerprint() const {
  return text::sha256_hex(generation + '\0' + classification + '\0' + aggregation + '\0' + prevalence);
}

}  // namespace qualpipe
