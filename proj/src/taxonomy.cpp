#include "qualpipe/taxonomy.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "builtin_assets.hpp"
#include "qualpipe/error.hpp"

namespace qualpipe {

using nlohmann::json;

ThemeTaxonomy::ThemeTaxonomy(std::vector<ThemeCategory> categories)
    : categories_(std::move(categories)) {
  if (categories_.size() < 2) {
    throw InputError("taxonomy needs at least one theme plus the catch-all category");
  }
  if (categories_.size() > 26) throw InputError("taxonomy has more than 26 categories");
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    char expected = static_cast<char>('A' + i);
    if (categories_[i].code != expected) {
      throw InputError(std::string("taxonomy codes must run consecutively from A; expected ") +
                       expected + " at position " + std::to_string(i + 1));
    }
    if (categories_[i].name.empty()) throw InputError("taxonomy category without a name");
  }
}

ThemeTaxonomy ThemeTaxonomy::from_json(std::string_view json_text) {
  json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("categories") ||
      !j["categories"].is_array()) {
    throw InputError("taxonomy JSON must be an object with a \"categories\" array");
  }
  std::vector<ThemeCategory> cats;
  for (const auto& c : j["categories"]) {
    auto code = c.value("code", "");
    if (code.size() != 1) throw InputError("taxonomy code must be a single letter");
    cats.push_back({code[0], c.value("name", ""), c.value("description", "")});
  }
  return ThemeTaxonomy(std::move(cats));
}

ThemeTaxonomy ThemeTaxonomy::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("input not found: taxonomy " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

ThemeTaxonomy ThemeTaxonomy::builtin() { return from_json(assets::kTaxonomyDefault); }

bool ThemeTaxonomy::contains(char code) const { return find(code) != nullptr; }

const ThemeCategory* ThemeTaxonomy::find(char code) const {
  for (const auto& c : categories_) {
    if (c.code == code) return &c;
  }
  return nullptr;
}

std::vector<ThemeCategory> ThemeTaxonomy::themes() const {
  return {categories_.begin(), categories_.end() - 1};
}

std::string ThemeTaxonomy::to_json() const {
  json cats = json::array();
  for (const auto& c : categories_) {
    cats.push_back({{"code", std::string(1, c.code)}, {"name", c.name}, {"description", c.description}});
  }
  return json{{"categories", cats}}.dump();
}

}  // namespace qualpipe
