#pragma once

// Content anonymization: gazetteer PII detection over token transcripts,
// type-and-length replacement matching, frame-exact edit planning and
// re-synthesis of the edited spans with the backbone.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "f3va/backbone/backbone.hpp"
#include "f3va/errors.hpp"
#include "f3va/world/world.hpp"

namespace f3va::seca {

using world::EntitySpan;
using world::EntityType;

/// Maximal runs of consecutive gazetteer hits of one type.
std::vector<EntitySpan> detect_pii(const std::vector<int>& tokens, const world::Gazetteer& gazetteer);

class ReplacementPool {
 public:
  explicit ReplacementPool(std::vector<world::PoolEntry> entries);

  const std::vector<world::PoolEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  /// Indices of entries with the given type and length.
  const std::vector<std::size_t>& bucket(EntityType type, int length) const;
  /// Distinct lengths available for a type, ascending.
  std::vector<int> lengths(EntityType type) const;

 private:
  std::vector<world::PoolEntry> entries_;
  std::map<std::pair<EntityType, int>, std::vector<std::size_t>> index_;
};

class UnmatchedEntity : public RejectedInput {
 public:
  explicit UnmatchedEntity(EntitySpan span)
      : RejectedInput("no replacement entity of type " + std::string(world::to_string(span.type))), span_(span) {}
  const EntitySpan& span() const { return span_; }

 private:
  EntitySpan span_;
};

/// Uniform draw among same-type, same-length entries other than `source`;
/// otherwise the nearest available length of that type (ties to the shorter).
std::vector<int> match_replacement(const EntitySpan& span, const std::vector<int>& source, const ReplacementPool& pool,
                                   Rng& rng);

struct PlannedEdit {
  EntitySpan span;
  std::vector<int> source;
  std::vector<int> replacement;
  int frame_start = 0;
  int frame_end = 0;  ///< half-open
};

struct EditPlan {
  std::string utterance_id;
  std::vector<PlannedEdit> edits;  ///< sorted, non-overlapping
  std::vector<std::string> errors;
};

/// Matches every span against the pool; unmatched spans are recorded in
/// `errors` and left out of the plan.
EditPlan plan_edits(const world::Utterance& utt, const std::vector<EntitySpan>& spans, const ReplacementPool& pool,
                    Rng& rng);

/// Replaces tokens and regenerates the frames of every planned span; frames
/// outside the spans are copied unchanged. Replacements of a different token
/// count are voiced over a proportionally resized frame range and the
/// alignment shifts accordingly.
world::Utterance apply_edits(const backbone::BackboneModel& model, const world::WorldParams& params,
                             const world::Utterance& utt, const EditPlan& plan, const VectorXd& speaker,
                             int frame_steps, Rng& rng);

enum class SpeakerSource { Original, Anonymized };
SpeakerSource parse_speaker_source(const std::string& s);

struct SecaOptions {
  SpeakerSource speaker_source = SpeakerSource::Original;
  int frame_steps = 16;
  double p_asr = 0.0;  ///< per-token substitution probability of the simulated recognizer
};

struct EditReport {
  std::string utterance_id;
  std::vector<PlannedEdit> edits;
  std::string status;  ///< "unchanged", "edited", "partial"
  std::vector<std::string> errors;
};

nlohmann::json to_json(const EditReport& r);

struct SecaResult {
  world::Dataset dataset;
  std::vector<EditReport> reports;
  std::map<std::string, EditPlan> plans;
};

/// detect -> match -> plan -> apply over a dataset. With SpeakerSource::Anonymized
/// edits are voiced with `targets` (utterance id -> anonymized identity).
SecaResult anonymize_content(const backbone::BackboneModel& model, const world::WorldParams& params,
                             const world::Dataset& ds, const ReplacementPool& pool, const world::Gazetteer& gazetteer,
                             const SecaOptions& options, Rng& rng,
                             const std::map<std::string, VectorXd>* targets = nullptr);

void save_reports(const std::filesystem::path& path, const std::vector<EditReport>& reports);

/// In-span token error over ground-truth PII: frames of edits that touch PII
/// and decode to a token other than the replacement, plus every frame of PII
/// tokens the plan left unedited, over the frames considered.
double span_recovery_error(const world::Utterance& original, const world::Utterance& edited, const EditPlan& plan,
                           const world::WorldParams& params, const VectorXd& speaker);

/// Mean squared frame difference across the boundaries of every edited span.
double boundary_discontinuity(const std::vector<std::pair<const world::Utterance*, const EditPlan*>>& edited);
/// The same statistic at uniformly drawn interior positions of unedited utterances.
double baseline_discontinuity(const std::vector<const world::Utterance*>& unedited, std::size_t samples, Rng& rng);

}  // namespace f3va::seca
