#include "coral/memory_unit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace coral {

using nlohmann::json;

json to_json(const MemoryEntry& e) {
  return {{"id", e.id},
          {"task", e.task},
          {"task_text", e.task_text},
          {"theta", to_json(e.theta)},
          {"spec", to_json(e.spec)},
          {"regions", regions_to_json(e.regions)},
          {"steps", e.steps},
          {"path_length", e.path_length},
          {"created_at", e.created_at}};
}

MemoryEntry memory_entry_from_json(const json& j) {
  MemoryEntry e;
  try {
    e.id = j.value("id", std::string{});
    e.task = j.at("task").get<std::string>();
    e.task_text = j.at("task_text").get<std::string>();
    e.theta = world_from_json(j.at("theta"));
    e.spec = spec_from_json(j.at("spec"), &e.theta).spec;
    e.regions = regions_from_json(j.at("regions"), &e.theta);
    e.steps = j.value("steps", 0L);
    e.path_length = j.value("path_length", 0.0);
    e.created_at = j.value("created_at", 0L);
  } catch (const json::exception& ex) {
    throw ParseError(std::string("memory entry: ") + ex.what());
  }
  return e;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double token_overlap(const std::string& a, const std::string& b) {
  const auto ta = tokenize(a), tb = tokenize(b);
  const std::set<std::string> sa(ta.begin(), ta.end()), sb(tb.begin(), tb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& t : sa) common += sb.count(t);
  return static_cast<double>(common) / static_cast<double>(sa.size() + sb.size() - common);
}

double theta_distance(const WorldBelief& a, const WorldBelief& b) {
  constexpr double kMassRange = kMassMax - kMassMin;
  constexpr double kFrictionRange = kFrictionMax - kFrictionMin;
  double sq = 0.0;
  for (const auto& [label, oa] : a.objects) {
    auto it = b.objects.find(label);
    if (it == b.objects.end()) {
      sq += 2.0;
      continue;
    }
    const double dm = (oa.mass - it->second.mass) / kMassRange;
    const double df = (oa.friction - it->second.friction) / kFrictionRange;
    sq += dm * dm + df * df;
  }
  for (const auto& [label, ob] : b.objects) {
    if (!a.objects.count(label)) sq += 2.0;
  }
  return std::sqrt(sq);
}

double similarity(const std::string& text, const WorldBelief& theta, const MemoryEntry& e) {
  return 0.5 * token_overlap(text, e.task_text) + 0.5 * std::exp(-theta_distance(theta, e.theta));
}

MemoryStore::MemoryStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty()) return;
  std::ifstream in(path_);
  if (!in) return;  // a missing file is an empty store
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      entries_.push_back(memory_entry_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      warnings_.push_back(path_.string() + ":" + std::to_string(lineno) + ": skipped (" +
                          e.what() + ")");
    }
  }
}

std::string MemoryStore::store(MemoryEntry entry) {
  std::vector<std::string> errs = validate(entry.spec, &entry.theta);
  for (const auto& [label, list] : entry.regions) {
    if (!entry.theta.contains(label)) errs.push_back("regions: unknown object label '" + label + "'");
  }
  if (entry.task_text.empty()) errs.push_back("memory entry needs task text");
  if (!errs.empty()) throw ValidationError(std::move(errs));

  entry.id = "mem-" + std::to_string(entries_.size());
  entry.created_at = static_cast<long>(entries_.size());
  if (!path_.empty()) {
    std::error_code ec;
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path(), ec);
    std::ofstream out(path_, std::ios::app);
    if (out) out << to_json(entry).dump() << '\n';
    if (!out) warnings_.push_back("could not append to memory file " + path_.string());
  }
  entries_.push_back(entry);
  return entry.id;
}

std::optional<Retrieval> MemoryStore::retrieve(const std::string& text, const WorldBelief& theta,
                                               double threshold) const {
  std::optional<Retrieval> best;
  for (const auto& e : entries_) {
    const double s = similarity(text, theta, e);
    // later entries win ties
    if (s >= threshold && (!best || s >= best->similarity)) best = Retrieval{e, s};
  }
  return best;
}

}  // namespace coral
