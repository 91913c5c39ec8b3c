#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace qualpipe {

struct ThemeCategory {
  char code = 'A';
  std::string name;
  std::string description;
};

// Ordered letter-coded categories; the last one is the catch-all.
class ThemeTaxonomy {
 public:
  ThemeTaxonomy() = default;
  // Throws InputError unless codes run A, B, C... and there are at least two.
  explicit ThemeTaxonomy(std::vector<ThemeCategory> categories);

  static ThemeTaxonomy from_json(std::string_view json_text);
  static ThemeTaxonomy from_file(const std::filesystem::path& path);
  // The five categories shipped in assets/taxonomy_default.json.
  static ThemeTaxonomy builtin();

  const std::vector<ThemeCategory>& categories() const { return categories_; }
  std::size_t size() const { return categories_.size(); }
  char catch_all() const { return categories_.back().code; }
  bool contains(char code) const;
  const ThemeCategory* find(char code) const;
  // Every category except the catch-all.
  std::vector<ThemeCategory> themes() const;

  std::string to_json() const;

 private:
  std::vector<ThemeCategory> categories_;
};

}  // namespace qualpipe
