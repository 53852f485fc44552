#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "f3va/anonymizer/anonymizer.hpp"
#include "f3va/backbone/backbone.hpp"
#include "f3va/world/world.hpp"

namespace f3va::cli {

struct Population {
  int train_speakers = 1000;
  int train_utterances = 2;
  double train_pii_utterance_prob = 1.0;
  int eval_speakers = 16;
  int eval_utterances = 60;
};

struct RunConfig {
  world::WorldConfig world;
  Population population;
  backbone::BackboneConfig backbone;
  anonymizer::AnonymizerConfig anonymizer;
  std::string strategy = "fixed:0";
  anonymizer::Scope scope = anonymizer::Scope::PerUtterance;
  int embedding_steps = 16;
  int frame_steps = 16;
  double p_asr = 0.0;
  std::map<std::string, std::uint64_t> seeds;
  nlohmann::json source;  ///< the document as read, echoed into reports

  /// Named seed; missing names are a configuration error.
  std::uint64_t seed(const std::string& name) const;
  /// Replaces every named seed by a value derived from `base` and the name.
  void override_seeds(std::uint64_t base);
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Writes manifest.json: command, inputs and outputs with content hashes, seeds, versions.
void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const std::map<std::string, std::filesystem::path>& inputs,
                    const std::vector<std::filesystem::path>& outputs, const std::map<std::string, std::uint64_t>& seeds,
                    const nlohmann::json& parameters = nlohmann::json::object());

}  // namespace f3va::cli
