#pragma once

// Dataset directory layout:
//   world.json              world parameters (A, B, C, token embedding, config)
//   speakers.jsonl          one speaker per line
//   utterances.jsonl        one utterance per line, frames as nested arrays
//   replacement_pool.jsonl  (type, tokens, length)
//   gazetteer.jsonl         (token, type)
// Floats are written with 9 significant digits.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "f3va/world/world.hpp"

namespace f3va::world {

WorldConfig world_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const WorldConfig& c);

nlohmann::json to_json(const WorldParams& params);
WorldParams world_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Speaker& s);
Speaker speaker_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Utterance& u);
Utterance utterance_from_json(const nlohmann::json& j);

void save_world(const std::filesystem::path& path, const WorldParams& params);
WorldParams load_world(const std::filesystem::path& path);

/// Writes speakers.jsonl and utterances.jsonl under `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

void save_pool(const std::filesystem::path& path, const std::vector<PoolEntry>& pool);
std::vector<PoolEntry> load_pool(const std::filesystem::path& path);

void save_gazetteer(const std::filesystem::path& path, const Gazetteer& g);
Gazetteer load_gazetteer(const std::filesystem::path& path);

/// Applies the serialization rounding in memory, so a generated dataset equals its reloaded copy.
void round_for_storage(Dataset& ds);
void round_for_storage(WorldParams& params);

}  // namespace f3va::world
