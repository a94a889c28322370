#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "coral/cost_engine.hpp"
#include "coral/strategist.hpp"
#include "coral/world_model.hpp"

namespace coral {

struct MemoryEntry {
  std::string id;
  std::string task;       ///< task id
  std::string task_text;
  WorldBelief theta;      ///< belief at success
  CostSpec spec;
  RegionMap regions;
  long steps = 0;
  double path_length = 0.0;
  long created_at = 0;    ///< store sequence number (monotone, reproducible)
};

nlohmann::json to_json(const MemoryEntry& entry);
/// Throws ParseError / ValidationError.
MemoryEntry memory_entry_from_json(const nlohmann::json& j);

/// Lower-cased alphanumeric tokens.
std::vector<std::string> tokenize(const std::string& text);
double token_overlap(const std::string& a, const std::string& b);

/// Euclidean norm of per-object mass/friction differences, each normalized by its clamp range.
/// A label present on only one side contributes 1 per field.
double theta_distance(const WorldBelief& a, const WorldBelief& b);

/// 0.5 * token overlap + 0.5 * exp(-theta distance).
double similarity(const std::string& text, const WorldBelief& theta, const MemoryEntry& entry);

struct Retrieval {
  MemoryEntry entry;
  double similarity = 0.0;
};

inline constexpr double kMemoryThreshold = 0.7;

/// Append-only JSON-lines store. An empty path keeps the store in memory only.
class MemoryStore {
 public:
  MemoryStore() = default;
  explicit MemoryStore(std::filesystem::path path);

  /// Validates, assigns the id, appends. Throws ValidationError for an invalid entry;
  /// I/O failures only add a warning.
  std::string store(MemoryEntry entry);

  std::optional<Retrieval> retrieve(const std::string& text, const WorldBelief& theta,
                                    double threshold = kMemoryThreshold) const;

  const std::vector<MemoryEntry>& entries() const { return entries_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::vector<MemoryEntry> entries_;
  std::vector<std::string> warnings_;
};

}  // namespace coral
