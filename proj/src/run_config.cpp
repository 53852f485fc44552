#include "f3va/cli/run_config.hpp"

#include "f3va/errors.hpp"
#include "f3va/nn/checkpoint.hpp"
#include "f3va/rng.hpp"
#include "f3va/textio.hpp"
#include "f3va/world/dataset_io.hpp"

namespace f3va::cli {

using nlohmann::json;

std::uint64_t RunConfig::seed(const std::string& name) const {
  const auto it = seeds.find(name);
  if (it == seeds.end()) throw ConfigError("run config: no seed named '" + name + "'");
  return it->second;
}

void RunConfig::override_seeds(std::uint64_t base) {
  for (auto& [name, value] : seeds) value = Rng(base).fork(name).seed();
}

RunConfig parse_run_config(const json& j) {
  try {
    RunConfig c;
    c.source = j;
    if (j.contains("world")) c.world = world::world_config_from_json(j.at("world"));
    if (j.contains("population")) {
      const auto& p = j.at("population");
      auto& q = c.population;
      if (p.contains("train_speakers")) q.train_speakers = p.at("train_speakers").get<int>();
      if (p.contains("train_utterances")) q.train_utterances = p.at("train_utterances").get<int>();
      if (p.contains("train_pii_utterance_prob")) q.train_pii_utterance_prob = p.at("train_pii_utterance_prob").get<double>();
      if (p.contains("eval_speakers")) q.eval_speakers = p.at("eval_speakers").get<int>();
      if (p.contains("eval_utterances")) q.eval_utterances = p.at("eval_utterances").get<int>();
    }
    if (j.contains("backbone")) c.backbone = backbone::backbone_config_from_json(j.at("backbone"));
    if (j.contains("anonymizer")) c.anonymizer = anonymizer::anonymizer_config_from_json(j.at("anonymizer"));
    if (j.contains("strategy")) {
      const auto& s = j.at("strategy");
      if (s.contains("kind")) c.strategy = s.at("kind").get<std::string>();
      if (s.contains("scope")) c.scope = anonymizer::parse_scope(s.at("scope").get<std::string>());
      anonymizer::WeightStrategy::parse(c.strategy, c.scope);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      if (e.contains("embedding_steps")) c.embedding_steps = e.at("embedding_steps").get<int>();
      if (e.contains("frame_steps")) c.frame_steps = e.at("frame_steps").get<int>();
    }
    if (j.contains("seca") && j.at("seca").contains("p_asr")) c.p_asr = j.at("seca").at("p_asr").get<double>();
    if (j.contains("seeds"))
      for (const auto& [name, v] : j.at("seeds").items()) c.seeds[name] = v.get<std::uint64_t>();
    if (c.embedding_steps < 1 || c.frame_steps < 1) throw ConfigError("run config: ODE steps must be positive");
    if (c.p_asr < 0.0 || c.p_asr > 1.0) throw ConfigError("run config: p_asr must lie in [0, 1]");
    const auto& p = c.population;
    if (p.train_speakers < 2 || p.train_speakers % 2 || p.eval_speakers < 2 || p.eval_speakers % 2 ||
        p.train_utterances < 2 || p.eval_utterances < 2)
      throw ConfigError("run config: populations need an even speaker count >= 2 and >= 2 utterances each");
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  } catch (const RejectedInput& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(j);
}

void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const std::map<std::string, std::filesystem::path>& inputs,
                    const std::vector<std::filesystem::path>& outputs, const std::map<std::string, std::uint64_t>& seeds,
                    const json& parameters) {
  json in = json::object(), out = json::object();
  for (const auto& [name, path] : inputs)
    in[name] = {{"path", path.filename().string()},
                {"hash", std::filesystem::is_regular_file(path) ? file_hash(path) : std::string("missing")}};
  for (const auto& path : outputs) out[path.lexically_relative(out_dir).generic_string()] = file_hash(path);
  json m = {{"command", command},
            {"inputs", in},
            {"outputs", out},
            {"seeds", seeds},
            {"parameters", parameters},
            {"versions", {{"f3va", "1.0.0"}, {"checkpoint_format", nn::kCheckpointVersion}}}};
  write_file(out_dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace f3va::cli
