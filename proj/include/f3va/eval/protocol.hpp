#pragma once

// Verification protocol: trial construction, speaker-level enrollment, cosine
// scoring and the ignorant / lazy-informed attackers, for acoustic embeddings
// (oracle speaker extraction) and content embeddings (token frequencies).

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "f3va/rng.hpp"
#include "f3va/world/world.hpp"

namespace f3va::eval {

enum class Mode { Acoustic, Content };
enum class Attacker { Ignorant, LazyInformed };

Mode parse_mode(const std::string& s);
Attacker parse_attacker(const std::string& s);
std::string to_string(Mode m);
std::string to_string(Attacker a);

struct Trial {
  std::string enroll_speaker_id;
  std::string test_utterance_id;
  int label = 0;  ///< 1 target, 0 nontarget

  bool operator==(const Trial&) const = default;
};

struct TrialList {
  std::vector<Trial> trials;
  std::vector<std::string> warnings;
};

inline constexpr double kMinTrialDuration = 5.0;
inline constexpr double kMaxTrialDuration = 15.0;

/// Per eligible enrollment utterance: two positives (another same-speaker
/// utterance, reused when only one exists) and two negatives, one from a male
/// and one from a female speaker other than the enrollment speaker (the other
/// gender substitutes when one side has no candidate). Acoustic mode keeps
/// utterances with duration in [5, 15] s; content mode keeps PII-bearing ones.
TrialList build_trials(const world::Dataset& ds, Mode mode, Rng& rng);

void save_trials(const std::filesystem::path& path, const std::vector<Trial>& trials);
std::vector<Trial> load_trials(const std::filesystem::path& path);
void save_scores(const std::filesystem::path& path, const std::vector<Trial>& trials, const std::vector<double>& scores);

/// Arithmetic mean, no re-normalisation.
VectorXd enrollment_embedding(const std::vector<VectorXd>& embeddings);

/// L2-normalised token-frequency vector over the vocabulary.
VectorXd content_embedding(const std::vector<int>& tokens, int vocab_size);

/// Per-speaker L2-normalised token-frequency centroids.
std::map<std::string, VectorXd> content_speaker_model(const std::map<std::string, std::vector<std::vector<int>>>& transcripts,
                                                      int vocab_size);

struct ScoredTrials {
  std::vector<Trial> trials;
  std::vector<double> scores;
};

struct EvalReport {
  Mode mode = Mode::Acoustic;
  Attacker attacker = Attacker::Ignorant;
  double eer = 0.0;  ///< percent
  std::size_t n_trials = 0;
  std::size_t n_target = 0;
  std::size_t n_nontarget = 0;
  ScoredTrials scored;
};

nlohmann::json to_json(const EvalReport& r);

/// Re-runs the anonymization system on enrollment data with fresh randomness.
using Reanonymizer = std::function<world::Dataset(const world::Dataset&, Rng&)>;

/// Scores `trials`: enrollment from original-domain utterances (ignorant) or
/// from re-anonymized enrollment utterances (lazy-informed), test utterances
/// from `test`. Enrollment uses every utterance of the enrollment speaker.
EvalReport run_attack(const world::WorldParams& params, const world::Dataset& original, const world::Dataset& test,
                      const std::vector<Trial>& trials, Attacker attacker, Mode mode, const Reanonymizer& reanonymize,
                      Rng& rng);

struct UtilityReport {
  double token_error_rate = 0.0;  ///< percent
  double secs_proxy = 0.0;
  std::size_t utterances = 0;
};

/// Intelligibility and identity-rendering proxies against the intended
/// identity of every utterance.
UtilityReport utility_probes(const world::Dataset& ds, const world::WorldParams& params,
                             const std::map<std::string, VectorXd>& targets);

}  // namespace f3va::eval
