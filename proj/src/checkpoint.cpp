#include "qualpipe/checkpoint.hpp"

#include <sstream>

#include "qualpipe/error.hpp"
#include "qualpipe/text.hpp"

namespace qualpipe {

using nlohmann::json;

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out << contents;
    if (!out.flush()) throw InputError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("input not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CheckpointStore::CheckpointStore(std::filesystem::path file, std::filesystem::path quarantine)
    : file_(std::move(file)), quarantine_(std::move(quarantine)) {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
}

CheckpointStore::Loaded CheckpointStore::load(const Validator& valid) {
  std::lock_guard lock(mu_);
  Loaded loaded;
  if (out_.is_open()) out_.close();
  std::ifstream in(file_);
  if (!in) return loaded;

  std::string kept;
  std::string bad;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    bool ok = !j.is_discarded() && j.is_object() && j.contains("unit") && j["unit"].is_string() &&
              j.contains("status") && j["status"].is_string() &&
              (j["status"] == "done" || j["status"] == "failed") && (!valid || valid(j));
    if (!ok) {
      bad += line + '\n';
      ++loaded.quarantined;
      continue;
    }
    kept += line + '\n';
    auto unit = j["unit"].get<std::string>();
    loaded.latest[unit] = std::move(j);
  }
  in.close();
  if (loaded.quarantined > 0) {
    std::ofstream q(quarantine_, std::ios::app);
    q << bad;
    write_file_atomic(file_, kept);
  }
  return loaded;
}

void CheckpointStore::append(const json& record) {
  std::lock_guard lock(mu_);
  if (!out_.is_open()) {
    out_.open(file_, std::ios::app);
    if (!out_) throw InputError("cannot open checkpoint " + file_.string());
  }
  out_ << record.dump() << '\n';
  out_.flush();
}

void CheckpointStore::archive() {
  std::lock_guard lock(mu_);
  if (out_.is_open()) out_.close();
  if (std::filesystem::exists(file_)) {
    auto stale = file_;
    stale += ".stale";
    std::filesystem::rename(file_, stale);
  }
}

}  // namespace qualpipe
