#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "qualpipe/stages.hpp"

namespace qualpipe {

nlohmann::json to_json(const Concern& c);
Concern concern_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SubTheme& s);
SubTheme subtheme_from_json(const nlohmann::json& j);

// Stage outputs in the run directory. Readers throw InputError on
// malformed content; writers are atomic.
std::vector<Concern> read_concerns(const std::filesystem::path& path);
void write_concerns(const std::filesystem::path& path, const std::vector<Concern>& concerns);

std::vector<ThemeAssignment> read_theme_assignments(const std::filesystem::path& path);
void write_theme_assignments(const std::filesystem::path& path,
                             const std::vector<ThemeAssignment>& assignments);

struct SubThemeFile {
  std::size_t subtheme_count = 0;
  std::map<char, SubThemeSet> themes;
  std::vector<char> failed_themes;
};

SubThemeFile read_subthemes(const std::filesystem::path& path);
void write_subthemes(const std::filesystem::path& path, const SubThemeFile& file,
                     const ThemeTaxonomy& taxonomy);

std::vector<SubThemeAssignment> read_subtheme_assignments(const std::filesystem::path& path);
void write_subtheme_assignments(const std::filesystem::path& path,
                                const std::vector<SubThemeAssignment>& assignments);

}  // namespace qualpipe
