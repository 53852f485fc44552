#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "f3va/anonymizer/anonymizer.hpp"
#include "f3va/backbone/backbone.hpp"
#include "f3va/cli/pipeline.hpp"
#include "f3va/cli/radar.hpp"
#include "f3va/cli/run_config.hpp"
#include "f3va/errors.hpp"
#include "f3va/eval/protocol.hpp"
#include "f3va/seca/seca.hpp"
#include "f3va/textio.hpp"
#include "f3va/world/dataset_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace f3va;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitData = 4;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
};

cli::RunConfig load_config(const Common& c) {
  auto rc = cli::load_run_config(c.config);
  if (c.seed) rc.override_seeds(*c.seed);
  if (c.steps) {
    if (*c.steps < 1) throw ConfigError("--steps must be positive");
    rc.embedding_steps = rc.frame_steps = *c.steps;
  }
  return rc;
}

std::map<std::string, std::uint64_t> seeds_of(const cli::RunConfig& rc, std::initializer_list<const char*> names) {
  std::map<std::string, std::uint64_t> out;
  for (const char* n : names) out[n] = rc.seed(n);
  return out;
}

void add_common(CLI::App* app, Common& c, bool with_steps = false) {
  app->add_option("--config", c.config, "run configuration JSON")->required();
  app->add_option("--out", c.out, "output directory")->required();
  app->add_option("--seed", c.seed, "overrides every configured seed");
  if (with_steps) app->add_option("--steps", c.steps, "Euler steps of every ODE");
}

void write_trace(const fs::path& path, const std::vector<backbone::LossRecord>& trace) {
  std::string s = "step\ttotal\tflow\tcommit\tlr\n";
  for (const auto& r : trace)
    s += std::to_string(r.step) + "\t" + format9(r.total) + "\t" + format9(r.flow) + "\t" + format9(r.commit) + "\t" +
         format9(r.lr) + "\n";
  write_file(path, s);
}

void write_trace(const fs::path& path, const std::vector<double>& trace) {
  std::string s = "step\tloss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) s += std::to_string(i + 1) + "\t" + format9(trace[i]) + "\n";
  write_file(path, s);
}

std::vector<fs::path> dataset_files(const fs::path& dir) { return {dir / "speakers.jsonl", dir / "utterances.jsonl"}; }

int cmd_gen_world(const Common& c) {
  const auto rc = load_config(c);
  const auto bundle = cli::generate_bundle(rc);
  const fs::path out = c.out;
  const auto files = cli::save_bundle(out, bundle);
  cli::write_manifest(out, "gen-world", {{"config", c.config}}, files,
                      seeds_of(rc, {"world", "train_data", "eval_data", "pool"}), {{"config", rc.source}});
  return 0;
}

int cmd_train_backbone(const Common& c, const std::string& world_dir) {
  const auto rc = load_config(c);
  const auto params = world::load_world(fs::path(world_dir) / "world.json");
  const auto train = world::load_dataset(fs::path(world_dir) / "train");
  Rng rng(rc.seed("backbone"));
  Rng frng = rng.fork("frames");
  const auto frames = backbone::collect_frames(train, params, frng);
  Rng trng = rng.fork("train");
  const auto trained = backbone::train_backbone(frames, params.D(), rc.backbone, trng);
  const fs::path out = c.out;
  backbone::save_backbone(out / "backbone.ckpt", trained.model);
  write_trace(out / "loss_trace.tsv", trained.trace);
  cli::write_manifest(out, "train-backbone",
                      {{"config", c.config}, {"world", fs::path(world_dir) / "world.json"},
                       {"train_utterances", fs::path(world_dir) / "train" / "utterances.jsonl"}},
                      {out / "backbone.ckpt", out / "loss_trace.tsv"}, seeds_of(rc, {"backbone"}),
                      {{"backbone", backbone::to_json(rc.backbone)}});
  return 0;
}

int cmd_train_anonymizer(const Common& c, const std::string& world_dir) {
  const auto rc = load_config(c);
  const auto params = world::load_world(fs::path(world_dir) / "world.json");
  const auto train = world::load_dataset(fs::path(world_dir) / "train");
  Rng rng(rc.seed("anonymizer"));
  const auto trained = anonymizer::train_anonymizer(cli::training_embeddings(train, params), rc.anonymizer, rng);
  const fs::path out = c.out;
  anonymizer::save_anonymizer(out / "anonymizer.ckpt", trained.model);
  write_trace(out / "loss_trace.tsv", trained.loss_trace);
  cli::write_manifest(out, "train-anonymizer",
                      {{"config", c.config}, {"world", fs::path(world_dir) / "world.json"},
                       {"train_utterances", fs::path(world_dir) / "train" / "utterances.jsonl"}},
                      {out / "anonymizer.ckpt", out / "loss_trace.tsv"}, seeds_of(rc, {"anonymizer"}),
                      {{"anonymizer", anonymizer::to_json(rc.anonymizer)}});
  return 0;
}

struct SystemArgs {
  std::string world;
  std::string backbone;
  std::string anonymizer;
  std::string strategy;
  std::string scope;
};

void add_system(CLI::App* app, SystemArgs& s, bool backbone_required) {
  app->add_option("--world", s.world, "gen-world output directory")->required();
  auto* b = app->add_option("--backbone", s.backbone, "backbone checkpoint");
  if (backbone_required) b->required();
  app->add_option("--anonymizer", s.anonymizer, "anonymizer checkpoint");
  app->add_option("--strategy", s.strategy, "fixed:W | range:A:B | pool");
  app->add_option("--scope", s.scope, "per_speaker | per_utterance");
}

/// Loaded models and the configured strategy, owning what AnonymizationSystem points to.
struct LoadedSystem {
  world::WorldParams params;
  backbone::BackboneModel backbone;
  std::optional<anonymizer::AnonymizerModel> anonymizer;
  anonymizer::EmbeddingPool pool;
  anonymizer::AnonymizationSystem system;

  LoadedSystem(const cli::RunConfig& rc, const SystemArgs& a)
      : params(world::load_world(fs::path(a.world) / "world.json")), backbone(backbone::load_backbone(a.backbone)) {
    const auto scope = a.scope.empty() ? rc.scope : anonymizer::parse_scope(a.scope);
    system.strategy = anonymizer::WeightStrategy::parse(a.strategy.empty() ? rc.strategy : a.strategy, scope);
    if (system.strategy.kind == anonymizer::WeightStrategy::Kind::PoolSelect) {
      pool = cli::speaker_pool(world::load_dataset(fs::path(a.world) / "train"));
    } else {
      if (a.anonymizer.empty()) throw ConfigError("--anonymizer is required for strategy " + system.strategy.to_string());
      anonymizer.emplace(anonymizer::load_anonymizer(a.anonymizer));
    }
    system.backbone = &backbone;
    system.anonymizer = anonymizer ? &*anonymizer : nullptr;
    system.world = &params;
    system.pool = &pool;
    system.embedding_steps = rc.embedding_steps;
    system.frame_steps = rc.frame_steps;
  }
  LoadedSystem(const LoadedSystem&) = delete;
  LoadedSystem& operator=(const LoadedSystem&) = delete;
};

std::map<std::string, fs::path> system_inputs(const Common& c, const SystemArgs& a) {
  std::map<std::string, fs::path> in{{"config", c.config}, {"world", fs::path(a.world) / "world.json"}};
  if (!a.backbone.empty()) in["backbone"] = a.backbone;
  if (!a.anonymizer.empty()) in["anonymizer"] = a.anonymizer;
  return in;
}

int cmd_anonymize(const Common& c, const SystemArgs& a, const std::string& input) {
  const auto rc = load_config(c);
  LoadedSystem ls(rc, a);
  const fs::path in_dir = input.empty() ? fs::path(a.world) / "eval" : fs::path(input);
  const auto ds = world::load_dataset(in_dir);
  Rng rng(rc.seed("anonymize"));
  const auto result = anonymizer::anonymize_dataset(ls.system, ds, rng);
  const fs::path out = c.out;
  world::save_dataset(out, result.dataset);
  anonymizer::save_mapping(out / "mapping.tsv", result.mapping);
  auto outputs = dataset_files(out);
  outputs.push_back(out / "mapping.tsv");
  auto inputs = system_inputs(c, a);
  inputs["utterances"] = in_dir / "utterances.jsonl";
  cli::write_manifest(out, "anonymize", inputs, outputs, seeds_of(rc, {"anonymize"}),
                      {{"strategy", ls.system.strategy.to_string()},
                       {"scope", anonymizer::to_string(ls.system.strategy.scope)},
                       {"embedding_steps", rc.embedding_steps},
                       {"frame_steps", rc.frame_steps}});
  return 0;
}

int cmd_seca(const Common& c, const std::string& world_dir, const std::string& backbone_path, const std::string& input,
             const std::string& source, const std::string& mapping, std::optional<double> p_asr) {
  auto rc = load_config(c);
  if (p_asr) rc.p_asr = *p_asr;
  const fs::path wd = world_dir;
  const auto params = world::load_world(wd / "world.json");
  const auto model = backbone::load_backbone(backbone_path);
  const fs::path in_dir = input.empty() ? wd / "eval" : fs::path(input);
  const auto ds = world::load_dataset(in_dir);
  const seca::ReplacementPool pool(world::load_pool(wd / "replacement_pool.jsonl"));
  const auto gaz = world::load_gazetteer(wd / "gazetteer.jsonl");
  seca::SecaOptions opt;
  opt.speaker_source = seca::parse_speaker_source(source);
  opt.frame_steps = rc.frame_steps;
  opt.p_asr = rc.p_asr;
  std::optional<std::map<std::string, VectorXd>> targets;
  if (opt.speaker_source == seca::SpeakerSource::Anonymized) {
    if (mapping.empty()) throw ConfigError("--mapping is required with --speaker-source anonymized");
    targets = anonymizer::utterance_targets(anonymizer::load_mapping(mapping), ds);
  }
  Rng rng(rc.seed("seca"));
  const auto result = seca::anonymize_content(model, params, ds, pool, gaz, opt, rng, targets ? &*targets : nullptr);
  const fs::path out = c.out;
  world::save_dataset(out, result.dataset);
  seca::save_reports(out / "edit_reports.jsonl", result.reports);
  auto outputs = dataset_files(out);
  outputs.push_back(out / "edit_reports.jsonl");
  std::map<std::string, fs::path> inputs{{"config", c.config},
                                         {"world", wd / "world.json"},
                                         {"backbone", backbone_path},
                                         {"utterances", in_dir / "utterances.jsonl"}};
  if (!mapping.empty()) inputs["mapping"] = mapping;
  cli::write_manifest(out, "seca", inputs, outputs, seeds_of(rc, {"seca"}),
                      {{"speaker_source", source}, {"p_asr", rc.p_asr}, {"frame_steps", rc.frame_steps}});
  return 0;
}

int cmd_build_trials(const Common& c, const std::string& data, const std::string& mode_text) {
  const auto rc = load_config(c);
  const auto mode = eval::parse_mode(mode_text);
  const auto ds = world::load_dataset(data);
  Rng rng = Rng(rc.seed("trials")).fork(eval::to_string(mode));
  const auto list = eval::build_trials(ds, mode, rng);
  for (const auto& w : list.warnings) std::cerr << "warning: " << w << "\n";
  const fs::path out = c.out;
  const auto file = out / ("trials_" + eval::to_string(mode) + ".tsv");
  eval::save_trials(file, list.trials);
  cli::write_manifest(out, "build-trials", {{"config", c.config}, {"utterances", fs::path(data) / "utterances.jsonl"}},
                      {file}, seeds_of(rc, {"trials"}), {{"mode", eval::to_string(mode)}, {"warnings", list.warnings}});
  return 0;
}

int cmd_evaluate(const Common& c, const SystemArgs& a, const std::string& original, const std::string& test,
                 const std::string& trials_path, const std::string& attacker_text, const std::string& mode_text,
                 const std::string& mapping) {
  const auto rc = load_config(c);
  const auto attacker = eval::parse_attacker(attacker_text);
  const auto mode = eval::parse_mode(mode_text);
  const fs::path wd = a.world;
  const auto params = world::load_world(wd / "world.json");
  const fs::path orig_dir = original.empty() ? wd / "eval" : fs::path(original);
  const auto orig = world::load_dataset(orig_dir);
  const auto test_ds = world::load_dataset(test);
  const auto trials = eval::load_trials(trials_path);

  std::unique_ptr<LoadedSystem> ls;
  std::optional<seca::ReplacementPool> pool;
  world::Gazetteer gaz;
  eval::Reanonymizer reanonymize;
  if (attacker == eval::Attacker::LazyInformed) {
    if (a.backbone.empty()) throw ConfigError("the lazy-informed attacker needs --backbone");
    if (mode == eval::Mode::Acoustic) {
      ls = std::make_unique<LoadedSystem>(rc, a);
      reanonymize = [&](const world::Dataset& d, Rng& r) { return anonymizer::anonymize_dataset(ls->system, d, r).dataset; };
    } else {
      ls = std::make_unique<LoadedSystem>(rc, a);
      pool.emplace(world::load_pool(wd / "replacement_pool.jsonl"));
      gaz = world::load_gazetteer(wd / "gazetteer.jsonl");
      reanonymize = [&](const world::Dataset& d, Rng& r) {
        seca::SecaOptions opt;
        opt.frame_steps = rc.frame_steps;
        opt.p_asr = rc.p_asr;
        return seca::anonymize_content(ls->backbone, ls->params, d, *pool, gaz, opt, r).dataset;
      };
    }
  }
  Rng rng(rc.seed("attack"));
  const auto report = eval::run_attack(params, orig, test_ds, trials, attacker, mode, reanonymize, rng);
  json j = eval::to_json(report);
  if (!mapping.empty()) {
    const auto targets = anonymizer::utterance_targets(anonymizer::load_mapping(mapping), test_ds);
    const auto u = eval::utility_probes(test_ds, params, targets);
    j["utility"] = {{"token_error_rate", round9(u.token_error_rate)},
                    {"secs_proxy", round9(u.secs_proxy)},
                    {"utterances", u.utterances}};
  }
  j["config"] = rc.source;
  const fs::path out = c.out;
  write_file(out / "report.json", j.dump(2) + "\n");
  eval::save_scores(out / "scores.tsv", report.scored.trials, report.scored.scores);
  auto inputs = system_inputs(c, a);
  inputs["original"] = orig_dir / "utterances.jsonl";
  inputs["test"] = fs::path(test) / "utterances.jsonl";
  inputs["trials"] = trials_path;
  if (!mapping.empty()) inputs["mapping"] = mapping;
  cli::write_manifest(out, "evaluate", inputs, {out / "report.json", out / "scores.tsv"}, seeds_of(rc, {"attack"}),
                      {{"mode", eval::to_string(mode)}, {"attacker", eval::to_string(attacker)}});
  return 0;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

int cmd_report(const std::string& out_dir, const std::vector<std::string>& inputs) {
  std::map<std::string, double> metrics;
  std::map<std::string, fs::path> manifest_inputs;
  std::optional<double> a_eer, c_eer;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto j = read_json(inputs[i]);
    manifest_inputs["report_" + std::to_string(i)] = inputs[i];
    try {
      const auto mode = j.at("mode").get<std::string>();
      const auto attacker = j.at("attacker").get<std::string>();
      const double eer = j.at("eer").get<double>();
      metrics[(mode == "acoustic" ? "A-EER/" : "C-EER/") + attacker] = eer;
      // The radar reports the strongest attacker, i.e. the lowest EER.
      auto& slot = mode == "acoustic" ? a_eer : c_eer;
      slot = slot ? std::min(*slot, eer) : eer;
      if (j.contains("utility")) {
        metrics["WER"] = j.at("utility").at("token_error_rate").get<double>();
        metrics["SECS"] = j.at("utility").at("secs_proxy").get<double>();
      }
    } catch (const json::exception& e) {
      throw DataError(inputs[i] + ": " + e.what());
    }
  }
  if (a_eer) metrics["A-EER"] = *a_eer;
  if (c_eer) metrics["C-EER"] = *c_eer;
  std::string table = "metric\tvalue\n";
  for (const auto& [k, v] : metrics) table += k + "\t" + format9(v) + "\n";
  std::string radar = "metric,raw,normalized\n";
  const auto spec = cli::default_radar_spec();
  for (const auto& e : spec) {
    const auto it = metrics.find(e.name);
    if (it == metrics.end()) continue;
    radar += e.name + "," + format9(it->second) + "," + format9(cli::radar_normalize(it->second, e)) + "\n";
  }
  const fs::path out = out_dir;
  write_file(out / "metrics.tsv", table);
  write_file(out / "radar.csv", radar);
  cli::write_manifest(out, "report", manifest_inputs, {out / "metrics.tsv", out / "radar.csv"}, {});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-matching voice and content anonymization on a synthetic speaker world"};
  app.require_subcommand(1);

  Common c;
  SystemArgs sys;
  std::string world_dir, input, data, mode = "acoustic", attacker = "ignorant", original, test, trials, mapping;
  std::string source = "original", backbone_path;
  std::optional<double> p_asr;
  std::vector<std::string> reports;

  auto* gen = app.add_subcommand("gen-world", "generate the synthetic world and its splits");
  add_common(gen, c);

  auto* tb = app.add_subcommand("train-backbone", "train the reconstruction backbone");
  add_common(tb, c);
  tb->add_option("--world", world_dir, "gen-world output directory")->required();

  auto* ta = app.add_subcommand("train-anonymizer", "train the speaker anonymizer");
  add_common(ta, c);
  ta->add_option("--world", world_dir, "gen-world output directory")->required();

  auto* an = app.add_subcommand("anonymize", "voice-anonymize a dataset");
  add_common(an, c, true);
  add_system(an, sys, true);
  an->add_option("--input", input, "dataset directory (default: the evaluation split)");

  auto* sc = app.add_subcommand("seca", "content-anonymize a dataset");
  add_common(sc, c, true);
  sc->add_option("--world", world_dir, "gen-world output directory")->required();
  sc->add_option("--backbone", backbone_path, "backbone checkpoint")->required();
  sc->add_option("--input", input, "dataset directory (default: the evaluation split)");
  sc->add_option("--speaker-source", source, "original | anonymized");
  sc->add_option("--mapping", mapping, "identity mapping for the anonymized speaker source");
  sc->add_option("--p-asr", p_asr, "token substitution probability of the simulated recognizer");

  auto* bt = app.add_subcommand("build-trials", "build verification trials");
  add_common(bt, c);
  bt->add_option("--data", data, "dataset directory")->required();
  bt->add_option("--mode", mode, "acoustic | content");

  auto* ev = app.add_subcommand("evaluate", "score trials under an attacker model");
  add_common(ev, c, true);
  add_system(ev, sys, false);
  ev->add_option("--original", original, "enrollment dataset directory (default: the evaluation split)");
  ev->add_option("--test", test, "test dataset directory")->required();
  ev->add_option("--trials", trials, "trial file")->required();
  ev->add_option("--attacker", attacker, "ignorant | lazy");
  ev->add_option("--mode", mode, "acoustic | content");
  ev->add_option("--mapping", mapping, "identity mapping, enables utility probes");

  auto* rp = app.add_subcommand("report", "aggregate evaluation reports");
  rp->add_option("--out", c.out, "output directory")->required();
  rp->add_option("--config", c.config, "run configuration JSON (unused, accepted for symmetry)");
  rp->add_option("reports", reports, "report.json files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_world(c);
    if (*tb) return cmd_train_backbone(c, world_dir);
    if (*ta) return cmd_train_anonymizer(c, world_dir);
    if (*an) return cmd_anonymize(c, sys, input);
    if (*sc) return cmd_seca(c, world_dir, backbone_path, input, source, mapping, p_asr);
    if (*bt) return cmd_build_trials(c, data, mode);
    if (*ev) return cmd_evaluate(c, sys, original, test, trials, attacker, mode, mapping);
    if (*rp) return cmd_report(c.out, reports);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const RejectedInput& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalDivergence& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
