#pragma once

// Synthetic speaker world. Frames follow a known linear model
//
//   x_t = A * onehot(token_t) + B * p_norm_t + C * s + eps,  eps ~ N(0, sigma^2 I)
//
// so speaker extraction and content recovery have exact analytic oracles.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "f3va/linalg.hpp"
#include "f3va/rng.hpp"

namespace f3va::world {

enum class Gender { Male, Female };
enum class EntityType { PER = 0, LOC = 1, ORG = 2, MISC = 3 };
inline constexpr int kEntityTypes = 4;

std::string_view to_string(Gender g);
std::string_view to_string(EntityType t);
Gender parse_gender(std::string_view s);
EntityType parse_entity_type(std::string_view s);

struct WorldConfig {
  int speaker_dim = 16;
  int frame_dim = 24;
  int content_dim = 16;          ///< dimension of the semantic feature front end
  int n_common_tokens = 32;      ///< non-PII vocabulary
  int pii_tokens_per_type = 32;  ///< vocabulary = common + 4 * pii_tokens_per_type
  double noise_sigma = 0.1;
  double feature_noise = 0.05;   ///< noise on semantic features
  double gender_offset = 2.5;    ///< distance of the gender means from the origin before normalisation
  double pitch_imprint_scale = 0.5;
  double speaker_imprint_scale = 1.0;
  double male_pitch_min_hz = 90, male_pitch_max_hz = 150;
  double female_pitch_min_hz = 170, female_pitch_max_hz = 250;
  double pitch_jitter = 0.1;     ///< std-dev of log f0 around the base pitch
  double unvoiced_prob = 0.2;
  double min_duration_s = 4.0, max_duration_s = 16.0;
  double frame_rate = 3.0;       ///< frames per second of duration
  int max_frames_per_token = 3;
  double pii_utterance_prob = 0.3;
  int lexicon_tokens_per_type = 2;
  int lexicon_entities_per_type = 2;
  int max_entity_len = 3;
  double style_concentration = 0.3;  ///< Dirichlet concentration of speaker token styles
  int pool_entries_per_type = 24;

  int vocab_size() const { return n_common_tokens + kEntityTypes * pii_tokens_per_type; }
  /// Throws ConfigError on out-of-range settings.
  void validate() const;
};

struct WorldParams {
  WorldConfig config;
  MatrixXd content_imprint;   ///< A: F x V
  VectorXd pitch_imprint;     ///< B: F
  MatrixXd speaker_imprint;   ///< C: F x D
  MatrixXd token_embedding;   ///< E x V semantic front end
  VectorXd gender_axis;       ///< unit D-vector separating the gender means
  std::uint64_t seed = 0;

  int D() const { return static_cast<int>(speaker_imprint.cols()); }
  int F() const { return static_cast<int>(speaker_imprint.rows()); }
  int V() const { return static_cast<int>(content_imprint.cols()); }
  int E() const { return static_cast<int>(token_embedding.rows()); }

  /// Type of a PII token, or nullopt for common tokens.
  std::optional<EntityType> token_type(int token) const;
  int pii_token(EntityType type, int k) const;

  /// Checks shapes, F >= D + 1 and full column rank of C; caches pinv(C).
  void finalize();
  const MatrixXd& speaker_pinv() const { return speaker_pinv_; }
  /// Smallest pairwise distance between columns of A.
  double min_content_separation() const;

 private:
  MatrixXd speaker_pinv_;
};

WorldParams make_world_params(const WorldConfig& config, Rng& rng);

struct Speaker {
  std::string id;
  Gender gender = Gender::Male;
  VectorXd embedding;
  double base_pitch_hz = 0.0;
  VectorXd style;  ///< token distribution over the vocabulary
  /// Per entity type, a list of entities (token sequences) exclusive to this speaker where possible.
  std::array<std::vector<std::vector<int>>, kEntityTypes> pii_lexicon;
};

struct EntitySpan {
  EntityType type = EntityType::PER;
  int token_start = 0;
  int token_end = 0;  ///< half-open

  bool operator==(const EntitySpan&) const = default;
};

struct FrameRange {
  int start = 0;
  int end = 0;  ///< half-open

  bool operator==(const FrameRange&) const = default;
  int size() const { return end - start; }
};

struct Utterance {
  std::string id;
  std::string speaker_id;
  Gender gender = Gender::Male;
  double duration_s = 0.0;
  std::vector<int> tokens;
  std::vector<EntitySpan> entity_spans;
  std::vector<double> f0_hz;
  MatrixXd frames;                     ///< T x F
  std::vector<FrameRange> token_frames;  ///< exact token -> frame alignment

  int num_frames() const { return static_cast<int>(frames.rows()); }
  bool has_pii() const { return !entity_spans.empty(); }
  /// Token id of every frame, expanded through the alignment.
  std::vector<int> frame_tokens() const;
  VectorXd p_norm() const;
  /// Throws DataError when alignment, spans or shapes are inconsistent.
  void check() const;
};

struct Dataset {
  std::vector<Speaker> speakers;
  std::vector<Utterance> utterances;

  const Speaker& speaker(const std::string& id) const;
  std::map<std::string, std::vector<std::size_t>> utterances_by_speaker() const;
};

struct PoolEntry {
  EntityType type = EntityType::PER;
  std::vector<int> tokens;

  int length() const { return static_cast<int>(tokens.size()); }
  bool operator==(const PoolEntry&) const = default;
};

using Gazetteer = std::map<int, EntityType>;

/// Generates a gender-balanced population and its utterances.
Dataset generate_world(const WorldParams& params, int n_speakers, int utts_per_speaker, Rng& rng,
                       const std::string& id_prefix = "spk");

/// Draws one speaker embedding from the population prior (gender mean + N(0, I), normalised).
VectorXd sample_speaker_embedding(const WorldParams& params, Gender gender, Rng& rng);

/// Synthesises frames for the given per-frame tokens and pitch.
MatrixXd synthesize_frames(const WorldParams& params, const std::vector<int>& frame_tokens, const VectorXd& p_norm,
                           const VectorXd& speaker, Rng& rng);

std::vector<PoolEntry> make_replacement_pool(const WorldParams& params, Rng& rng);
Gazetteer make_gazetteer(const WorldParams& params);

/// pinv(C) * mean_t(x_t - A onehot(token_t) - B p_norm_t)
VectorXd oracle_extract_speaker(const MatrixXd& frames, const std::vector<int>& frame_tokens, const VectorXd& p_norm,
                                const WorldParams& params);
VectorXd oracle_extract_speaker(const Utterance& utt, const WorldParams& params);

/// Per frame, argmin_v ||x_t - B p_t - C s - A e_v||, ties to the lowest id.
std::vector<int> oracle_recover_tokens(const MatrixXd& frames, const VectorXd& p_norm, const VectorXd& speaker,
                                       const WorldParams& params);

/// Fraction of positions where `hyp` differs from `ref` (equal lengths).
double token_error_fraction(const std::vector<int>& hyp, const std::vector<int>& ref);

}  // namespace f3va::world
