#include "f3va/cli/pipeline.hpp"

#include "f3va/world/dataset_io.hpp"

namespace f3va::cli {

WorldBundle generate_bundle(const RunConfig& config) {
  WorldBundle b;
  Rng wrng(config.seed("world"));
  b.params = world::make_world_params(config.world, wrng);
  world::round_for_storage(b.params);

  auto train_params = b.params;
  train_params.config.pii_utterance_prob = config.population.train_pii_utterance_prob;
  Rng trng(config.seed("train_data"));
  b.train = world::generate_world(train_params, config.population.train_speakers, config.population.train_utterances,
                                  trng, "trn");
  world::round_for_storage(b.train);

  Rng erng(config.seed("eval_data"));
  b.eval = world::generate_world(b.params, config.population.eval_speakers, config.population.eval_utterances, erng,
                                 "spk");
  world::round_for_storage(b.eval);

  Rng prng(config.seed("pool"));
  b.pool = world::make_replacement_pool(b.params, prng);
  b.gazetteer = world::make_gazetteer(b.params);
  return b;
}

std::vector<std::filesystem::path> save_bundle(const std::filesystem::path& dir, const WorldBundle& b) {
  world::save_world(dir / "world.json", b.params);
  world::save_dataset(dir / "train", b.train);
  world::save_dataset(dir / "eval", b.eval);
  world::save_pool(dir / "replacement_pool.jsonl", b.pool);
  world::save_gazetteer(dir / "gazetteer.jsonl", b.gazetteer);
  return {dir / "world.json",
          dir / "train" / "speakers.jsonl",
          dir / "train" / "utterances.jsonl",
          dir / "eval" / "speakers.jsonl",
          dir / "eval" / "utterances.jsonl",
          dir / "replacement_pool.jsonl",
          dir / "gazetteer.jsonl"};
}

WorldBundle load_bundle(const std::filesystem::path& dir) {
  WorldBundle b;
  b.params = world::load_world(dir / "world.json");
  b.train = world::load_dataset(dir / "train");
  b.eval = world::load_dataset(dir / "eval");
  b.pool = world::load_pool(dir / "replacement_pool.jsonl");
  b.gazetteer = world::load_gazetteer(dir / "gazetteer.jsonl");
  return b;
}

MatrixXd training_embeddings(const world::Dataset& ds, const world::WorldParams& params) {
  MatrixXd out(params.D(), static_cast<Eigen::Index>(ds.utterances.size()));
  for (std::size_t i = 0; i < ds.utterances.size(); ++i)
    out.col(static_cast<Eigen::Index>(i)) = world::oracle_extract_speaker(ds.utterances[i], params);
  return out;
}

anonymizer::EmbeddingPool speaker_pool(const world::Dataset& ds) {
  anonymizer::EmbeddingPool pool;
  for (const auto& s : ds.speakers) {
    pool.speaker_ids.push_back(s.id);
    pool.embeddings.push_back(s.embedding);
  }
  return pool;
}

}  // namespace f3va::cli
