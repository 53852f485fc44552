#pragma once

#include <filesystem>
#include <vector>

#include "f3va/anonymizer/anonymizer.hpp"
#include "f3va/cli/run_config.hpp"
#include "f3va/world/world.hpp"

namespace f3va::cli {

/// Everything gen-world produces: the generative model, a training split, an
/// evaluation split, the SECA replacement pool and the gazetteer.
struct WorldBundle {
  world::WorldParams params;
  world::Dataset train;
  world::Dataset eval;
  std::vector<world::PoolEntry> pool;
  world::Gazetteer gazetteer;
};

/// Generates the bundle with values rounded as they are stored, so an
/// in-memory bundle equals its saved and reloaded form.
WorldBundle generate_bundle(const RunConfig& config);
/// Writes world.json, train/, eval/, replacement_pool.jsonl, gazetteer.jsonl; returns the files written.
std::vector<std::filesystem::path> save_bundle(const std::filesystem::path& dir, const WorldBundle& bundle);
WorldBundle load_bundle(const std::filesystem::path& dir);

/// Oracle-extracted utterance embeddings of a dataset, D x N.
MatrixXd training_embeddings(const world::Dataset& ds, const world::WorldParams& params);
/// Ground-truth speaker embeddings of a dataset, for PoolSelect.
anonymizer::EmbeddingPool speaker_pool(const world::Dataset& ds);

}  // namespace f3va::cli
