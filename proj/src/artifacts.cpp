#include "qualpipe/artifacts.hpp"

#include <fstream>
#include <sstream>

#include "qualpipe/checkpoint.hpp"
#include "qualpipe/error.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe {

using nlohmann::json;

namespace {

char code_from(const json& j, const char* key) {
  auto s = j.at(key).get<std::string>();
  if (s.size() != 1) throw InputError(std::string("field ") + key + " must be a single letter");
  return s[0];
}

template <typename T, typename Decode>
std::vector<T> read_ndjson(const std::filesystem::path& path, Decode decode) {
  std::ifstream in(path);
  if (!in) throw InputError("input not found: " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(decode(json::parse(line)));
    } catch (const json::exception& e) {
      throw InputError(path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

template <typename T, typename Encode>
void write_ndjson(const std::filesystem::path& path, const std::vector<T>& items, Encode encode) {
  std::string out;
  for (const auto& item : items) out += encode(item).dump() + '\n';
  write_file_atomic(path, out);
}

}  // namespace

json to_json(const Concern& c) {
  return {{"concern_id", c.concern_id},
          {"group_key", c.group_key},
          {"earliest_timestamp", c.earliest_timestamp},
          {"title", c.title},
          {"description", c.description},
          {"quote", c.quote},
          {"quote_check", std::string(to_string(c.quote_check))}};
}

Concern concern_from_json(const json& j) {
  Concern c;
  c.concern_id = j.at("concern_id").get<std::string>();
  c.group_key = j.at("group_key").get<std::string>();
  c.earliest_timestamp = j.at("earliest_timestamp").get<std::int64_t>();
  c.title = j.at("title").get<std::string>();
  c.description = j.at("description").get<std::string>();
  c.quote = j.at("quote").get<std::string>();
  c.quote_check = parse_quote_check(j.value("quote_check", "unchecked"));
  return c;
}

json to_json(const SubTheme& s) {
  return {{"rank", s.rank}, {"title", s.title}, {"description", s.description}};
}

SubTheme subtheme_from_json(const json& j) {
  return {j.at("rank").get<int>(), j.at("title").get<std::string>(),
          j.value("description", "")};
}

std::vector<Concern> read_concerns(const std::filesystem::path& path) {
  return read_ndjson<Concern>(path, concern_from_json);
}

void write_concerns(const std::filesystem::path& path, const std::vector<Concern>& concerns) {
  write_ndjson(path, concerns, [](const Concern& c) { return to_json(c); });
}

std::vector<ThemeAssignment> read_theme_assignments(const std::filesystem::path& path) {
  return read_ndjson<ThemeAssignment>(path, [](const json& j) {
    return ThemeAssignment{j.at("concern_id").get<std::string>(), code_from(j, "theme")};
  });
}

void write_theme_assignments(const std::filesystem::path& path,
                             const std::vector<ThemeAssignment>& assignments) {
  write_ndjson(path, assignments, [](const ThemeAssignment& a) {
    return json{{"concern_id", a.concern_id}, {"theme", std::string(1, a.theme)}};
  });
}

SubThemeFile read_subthemes(const std::filesystem::path& path) {
  SubThemeFile file;
  try {
    json j = json::parse(read_file(path));
    file.subtheme_count = j.at("subtheme_count").get<std::size_t>();
    for (const auto& t : j.at("themes")) {
      SubThemeSet set;
      set.theme = code_from(t, "theme");
      for (const auto& e : t.at("entries")) set.entries.push_back(subtheme_from_json(e));
      file.themes[set.theme] = std::move(set);
    }
    for (const auto& f : j.value("failed_themes", json::array())) {
      file.failed_themes.push_back(f.get<std::string>().at(0));
    }
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return file;
}

void write_subthemes(const std::filesystem::path& path, const SubThemeFile& file,
                     const ThemeTaxonomy& taxonomy) {
  json themes = json::array();
  for (const auto& [code, set] : file.themes) {
    json entries = json::array();
    for (const auto& e : set.entries) entries.push_back(to_json(e));
    const auto* cat = taxonomy.find(code);
    themes.push_back({{"theme", std::string(1, code)},
                      {"name", cat ? cat->name : ""},
                      {"entries", std::move(entries)}});
  }
  json failed = json::array();
  for (char c : file.failed_themes) failed.push_back(std::string(1, c));
  json j = {{"subtheme_count", file.subtheme_count},
            {"themes", std::move(themes)},
            {"failed_themes", std::move(failed)}};
  write_file_atomic(path, j.dump(2) + "\n");
}

std::vector<SubThemeAssignment> read_subtheme_assignments(const std::filesystem::path& path) {
  return read_ndjson<SubThemeAssignment>(path, [](const json& j) {
    return SubThemeAssignment{j.at("concern_id").get<std::string>(), code_from(j, "theme"),
                              code_from(j, "subtheme")};
  });
}

void write_subtheme_assignments(const std::filesystem::path& path,
                                const std::vector<SubThemeAssignment>& assignments) {
  write_ndjson(path, assignments, [](const SubThemeAssignment& a) {
    return json{{"concern_id", a.concern_id},
                {"theme", std::string(1, a.theme)},
                {"subtheme", std::string(1, a.subtheme)}};
  });
}

}  // namespace qualpipe
