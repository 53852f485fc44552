#pragma once

// Speaker-embedding anonymizer: a flow-matching field over embeddings used in
// three stages, encode (backward ODE), obscure, generate (forward ODE).

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "f3va/backbone/backbone.hpp"
#include "f3va/flowmath.hpp"
#include "f3va/nn/checkpoint.hpp"
#include "f3va/nn/ushaped_field.hpp"
#include "f3va/world/world.hpp"

namespace f3va::anonymizer {

struct AnonymizerConfig {
  nn::UShapedConfig field{};
  int steps = 3000;
  int batch = 128;
  double peak_lr = 3e-3;
  double pct_start = 0.1;
  double weight_decay = 0.0;

  void validate() const;
};

AnonymizerConfig anonymizer_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnonymizerConfig& c);

struct AnonymizerModel {
  nn::UShapedField<float> field;
  int trained_steps = 0;
  std::uint64_t seed = 0;
  std::string data_hash;  ///< hash of the training embeddings

  int dim() const { return field.dim(); }
  std::vector<nn::Tensor> to_tensors() const;
  static AnonymizerModel from_tensors(const std::vector<nn::Tensor>& tensors);
};

/// A model whose field is identically zero (every ODE is the identity).
AnonymizerModel zero_anonymizer(const nn::UShapedConfig& config);

struct TrainedAnonymizer {
  AnonymizerModel model;
  std::vector<double> loss_trace;
};

/// Flow-matching training on the columns of `embeddings` (D x N).
TrainedAnonymizer train_anonymizer(const MatrixXd& embeddings, const AnonymizerConfig& config, Rng& rng);

/// ODE-1, integrated from t=1 to t=0. Columns are independent embeddings.
MatrixXd encode(const AnonymizerModel& model, const MatrixXd& s_orig,
                const flow::IntegrationSpec& spec = flow::IntegrationSpec::backward());
/// ODE-2, integrated from t=0 to t=1.
MatrixXd generate(const AnonymizerModel& model, const MatrixXd& z_anon,
                  const flow::IntegrationSpec& spec = flow::IntegrationSpec::forward());

/// ((1-w) z_rand + w z_orig) / sqrt((1-w)^2 + w^2)
VectorXd obscure(const VectorXd& z_orig, const VectorXd& z_rand, double w);

enum class Scope { PerSpeaker, PerUtterance };

struct WeightStrategy {
  enum class Kind { Fixed, UniformRange, PoolSelect };
  Kind kind = Kind::Fixed;
  double w = 0.0;  ///< Fixed
  double a = -1.0, b = 1.0;  ///< UniformRange
  Scope scope = Scope::PerSpeaker;

  static WeightStrategy fixed(double w, Scope scope = Scope::PerSpeaker);
  static WeightStrategy range(double a, double b, Scope scope = Scope::PerSpeaker);
  static WeightStrategy pool(Scope scope = Scope::PerSpeaker);
  /// "fixed:W", "range:A:B" or "pool".
  static WeightStrategy parse(const std::string& text, Scope scope = Scope::PerSpeaker);
  std::string to_string() const;
  void validate() const;
};

Scope parse_scope(const std::string& text);
std::string to_string(Scope scope);

struct AnonymizedSpeaker {
  VectorXd s_anon;
  std::optional<double> w_used;  ///< absent for PoolSelect
};

/// Pool of real embeddings tagged with their speaker, used by PoolSelect.
struct EmbeddingPool {
  std::vector<std::string> speaker_ids;
  std::vector<VectorXd> embeddings;

  bool empty() const { return embeddings.empty(); }
};

/// Anonymizes one embedding. PoolSelect draws uniformly among pool entries
/// whose speaker differs from `speaker_id`.
AnonymizedSpeaker anonymize_speaker(const AnonymizerModel* model, const VectorXd& s_orig,
                                    const WeightStrategy& strategy, Rng& rng, int steps,
                                    const EmbeddingPool* pool = nullptr, const std::string& speaker_id = "");

struct MappingRow {
  std::string key;  ///< speaker id, or "speaker/utterance" in per-utterance scope
  std::optional<double> w_used;
  VectorXd s_anon;
};

struct AnonymizedDataset {
  world::Dataset dataset;
  std::vector<MappingRow> mapping;
  /// s_anon for every utterance id.
  std::map<std::string, VectorXd> utterance_targets;
};

struct AnonymizationSystem {
  const backbone::BackboneModel* backbone = nullptr;
  const AnonymizerModel* anonymizer = nullptr;  ///< may be null for PoolSelect
  const world::WorldParams* world = nullptr;
  WeightStrategy strategy{};
  const EmbeddingPool* pool = nullptr;
  int embedding_steps = 16;  ///< Euler steps of ODE-1 and ODE-2
  int frame_steps = 16;      ///< Euler steps of ODE-3
};

/// Regenerates every utterance's frames with its anonymized identity. Tokens,
/// pitch, alignment and durations are preserved. Source identities are the
/// oracle-extracted utterance embeddings (averaged per speaker in per-speaker scope).
AnonymizedDataset anonymize_dataset(const AnonymizationSystem& system, const world::Dataset& ds, Rng& rng);

void save_anonymizer(const std::filesystem::path& path, const AnonymizerModel& model);
AnonymizerModel load_anonymizer(const std::filesystem::path& path);

/// TSV rows: key \t w_used (or NA) \t comma-separated s_anon.
void save_mapping(const std::filesystem::path& path, const std::vector<MappingRow>& rows);
std::vector<MappingRow> load_mapping(const std::filesystem::path& path);
/// Resolves the identity of every utterance from per-utterance or per-speaker mapping rows.
std::map<std::string, VectorXd> utterance_targets(const std::vector<MappingRow>& mapping, const world::Dataset& ds);

}  // namespace f3va::anonymizer
