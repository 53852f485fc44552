#pragma once

// Loads the artifacts of a scripted desk run: world bundle, trained models and
// the run configuration echoed by the evaluation stage.

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "f3va/anonymizer/anonymizer.hpp"
#include "f3va/backbone/backbone.hpp"
#include "f3va/cli/pipeline.hpp"
#include "f3va/eval/protocol.hpp"
#include "f3va/linalg.hpp"
#include "f3va/textio.hpp"

namespace f3va::testing {

struct DeskRun {
  std::filesystem::path dir;
  cli::WorldBundle bundle;
  backbone::BackboneModel backbone;
  anonymizer::AnonymizerModel anonymizer;
  anonymizer::EmbeddingPool pool;

  explicit DeskRun(std::filesystem::path run_dir)
      : dir(std::move(run_dir)),
        bundle(cli::load_bundle(dir / "world")),
        backbone(backbone::load_backbone(dir / "backbone" / "backbone.ckpt")),
        anonymizer(anonymizer::load_anonymizer(dir / "anonymizer" / "anonymizer.ckpt")),
        pool(cli::speaker_pool(bundle.train)) {}

  const world::WorldParams& params() const { return bundle.params; }

  anonymizer::AnonymizationSystem system(const anonymizer::WeightStrategy& strategy, int embedding_steps = 16,
                                         int frame_steps = 16) const {
    anonymizer::AnonymizationSystem s;
    s.backbone = &backbone;
    s.anonymizer = &anonymizer;
    s.world = &bundle.params;
    s.strategy = strategy;
    s.pool = &pool;
    s.embedding_steps = embedding_steps;
    s.frame_steps = frame_steps;
    return s;
  }

  /// Evaluation-split oracle embedding of every speaker, averaged over its utterances.
  std::map<std::string, VectorXd> speaker_embeddings() const {
    std::map<std::string, std::vector<VectorXd>> per;
    for (const auto& u : bundle.eval.utterances) per[u.speaker_id].push_back(world::oracle_extract_speaker(u, bundle.params));
    std::map<std::string, VectorXd> out;
    for (const auto& [id, v] : per) out[id] = eval::enrollment_embedding(v);
    return out;
  }

  /// The evaluation split restricted to the first `n` utterances of every speaker.
  world::Dataset eval_subset(int n) const {
    world::Dataset d;
    d.speakers = bundle.eval.speakers;
    std::map<std::string, int> seen;
    for (const auto& u : bundle.eval.utterances)
      if (seen[u.speaker_id]++ < n) d.utterances.push_back(u);
    return d;
  }
};

}  // namespace f3va::testing
