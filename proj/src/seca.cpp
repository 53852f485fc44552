#include "f3va/seca/seca.hpp"

#include <algorithm>
#include <cmath>

#include "f3va/textio.hpp"

namespace f3va::seca {

using nlohmann::json;

std::vector<EntitySpan> detect_pii(const std::vector<int>& tokens, const world::Gazetteer& gazetteer) {
  std::vector<EntitySpan> spans;
  const int n = static_cast<int>(tokens.size());
  int i = 0;
  while (i < n) {
    const auto hit = gazetteer.find(tokens[static_cast<std::size_t>(i)]);
    if (hit == gazetteer.end()) {
      ++i;
      continue;
    }
    int j = i + 1;
    while (j < n) {
      const auto next = gazetteer.find(tokens[static_cast<std::size_t>(j)]);
      if (next == gazetteer.end() || next->second != hit->second) break;
      ++j;
    }
    spans.push_back({hit->second, i, j});
    i = j;
  }
  return spans;
}

ReplacementPool::ReplacementPool(std::vector<world::PoolEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].tokens.empty()) throw DataError("replacement pool: empty entity");
    index_[{entries_[i].type, entries_[i].length()}].push_back(i);
  }
}

const std::vector<std::size_t>& ReplacementPool::bucket(EntityType type, int length) const {
  static const std::vector<std::size_t> none;
  const auto it = index_.find({type, length});
  return it == index_.end() ? none : it->second;
}

std::vector<int> ReplacementPool::lengths(EntityType type) const {
  std::vector<int> out;
  for (const auto& [key, idx] : index_)
    if (key.first == type) out.push_back(key.second);
  return out;
}

std::vector<int> match_replacement(const EntitySpan& span, const std::vector<int>& source, const ReplacementPool& pool,
                                   Rng& rng) {
  if (pool.empty()) throw RejectedInput("match_replacement: empty pool");
  const int len = span.token_end - span.token_start;
  const auto pick = [&](int length) -> std::optional<std::vector<int>> {
    std::vector<std::size_t> cands;
    for (std::size_t i : pool.bucket(span.type, length))
      if (pool.entries()[i].tokens != source) cands.push_back(i);
    if (cands.empty()) return std::nullopt;
    return pool.entries()[cands[rng.index(cands.size())]].tokens;
  };
  if (auto exact = pick(len)) return *exact;
  std::vector<int> lengths = pool.lengths(span.type);
  // Nearest length first; among equal distances the shorter one.
  std::stable_sort(lengths.begin(), lengths.end(), [&](int a, int b) {
    const int da = std::abs(a - len), db = std::abs(b - len);
    return da != db ? da < db : a < b;
  });
  for (int l : lengths)
    if (l != len)
      if (auto r = pick(l)) return *r;
  throw UnmatchedEntity(span);
}

EditPlan plan_edits(const world::Utterance& utt, const std::vector<EntitySpan>& spans, const ReplacementPool& pool,
                    Rng& rng) {
  EditPlan plan;
  plan.utterance_id = utt.id;
  std::vector<EntitySpan> sorted = spans;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.token_start < b.token_start; });
  int last_end = 0;
  for (const auto& s : sorted) {
    if (s.token_start < last_end || s.token_start >= s.token_end || s.token_end > static_cast<int>(utt.tokens.size()))
      throw RejectedInput("plan_edits: spans overlap or fall outside the utterance");
    last_end = s.token_end;
    PlannedEdit e;
    e.span = s;
    e.source.assign(utt.tokens.begin() + s.token_start, utt.tokens.begin() + s.token_end);
    try {
      e.replacement = match_replacement(s, e.source, pool, rng);
    } catch (const UnmatchedEntity& err) {
      plan.errors.push_back(std::string(err.what()) + " at tokens [" + std::to_string(s.token_start) + "," +
                            std::to_string(s.token_end) + ")");
      continue;
    }
    e.frame_start = utt.token_frames[static_cast<std::size_t>(s.token_start)].start;
    e.frame_end = utt.token_frames[static_cast<std::size_t>(s.token_end - 1)].end;
    plan.edits.push_back(std::move(e));
  }
  return plan;
}

namespace {

/// Splits `frames` frames over `tokens` tokens as evenly as possible, earlier tokens taking the remainder.
std::vector<int> spread(int frames, int tokens) {
  std::vector<int> out(static_cast<std::size_t>(tokens), frames / tokens);
  for (int k = 0; k < frames % tokens; ++k) ++out[static_cast<std::size_t>(k)];
  return out;
}

}  // namespace

world::Utterance apply_edits(const backbone::BackboneModel& model, const world::WorldParams& params,
                             const world::Utterance& utt, const EditPlan& plan, const VectorXd& speaker,
                             int frame_steps, Rng& rng) {
  if (plan.edits.empty()) return utt;
  const VectorXd p_norm = utt.p_norm();
  world::Utterance out = utt;
  out.tokens.clear();
  out.token_frames.clear();
  out.entity_spans.clear();
  out.f0_hz.clear();
  std::vector<MatrixXd> pieces;
  std::vector<backbone::ReconstructRequest> requests;
  std::vector<std::size_t> request_piece;

  int tok = 0, frame = 0, out_frame = 0;
  const auto copy_until = [&](int token_end) {
    const int frame_end = token_end == static_cast<int>(utt.tokens.size())
                              ? utt.num_frames()
                              : utt.token_frames[static_cast<std::size_t>(token_end)].start;
    for (; tok < token_end; ++tok) {
      const auto& r = utt.token_frames[static_cast<std::size_t>(tok)];
      out.tokens.push_back(utt.tokens[static_cast<std::size_t>(tok)]);
      out.token_frames.push_back({r.start - frame + out_frame, r.end - frame + out_frame});
    }
    pieces.push_back(utt.frames.middleRows(frame, frame_end - frame));
    out.f0_hz.insert(out.f0_hz.end(), utt.f0_hz.begin() + frame, utt.f0_hz.begin() + frame_end);
    out_frame += frame_end - frame;
    frame = frame_end;
  };

  for (const auto& e : plan.edits) {
    if (e.span.token_start < tok || e.span.token_end > static_cast<int>(utt.tokens.size()))
      throw RejectedInput("apply_edits: plan spans overlap or fall outside the utterance");
    copy_until(e.span.token_start);
    const int old_frames = e.frame_end - e.frame_start;
    const int n_old = e.span.token_end - e.span.token_start;
    const int n_new = static_cast<int>(e.replacement.size());
    std::vector<int> lengths;
    if (n_new == n_old) {
      for (int k = e.span.token_start; k < e.span.token_end; ++k)
        lengths.push_back(utt.token_frames[static_cast<std::size_t>(k)].size());
    } else {
      const int new_frames =
          std::max(n_new, static_cast<int>(std::lround(static_cast<double>(old_frames) * n_new / n_old)));
      lengths = spread(new_frames, n_new);
    }
    int new_frames = 0;
    for (int l : lengths) new_frames += l;
    std::vector<int> frame_tokens;
    out.entity_spans.push_back({e.span.type, static_cast<int>(out.tokens.size()),
                                static_cast<int>(out.tokens.size()) + n_new});
    for (int k = 0; k < n_new; ++k) {
      out.tokens.push_back(e.replacement[static_cast<std::size_t>(k)]);
      out.token_frames.push_back({out_frame, out_frame + lengths[static_cast<std::size_t>(k)]});
      out_frame += lengths[static_cast<std::size_t>(k)];
      for (int f = 0; f < lengths[static_cast<std::size_t>(k)]; ++f) frame_tokens.push_back(e.replacement[static_cast<std::size_t>(k)]);
    }
    // Pitch of the original span, resampled by nearest index when the length changes.
    VectorXd span_p(new_frames);
    for (int f = 0; f < new_frames; ++f) {
      const int src = e.frame_start + static_cast<int>(static_cast<long long>(f) * old_frames / new_frames);
      span_p(f) = p_norm(src);
      out.f0_hz.push_back(utt.f0_hz[static_cast<std::size_t>(src)]);
    }
    Rng span_rng = rng.fork(static_cast<std::uint64_t>(e.span.token_start));
    requests.push_back(backbone::make_request(model, params, frame_tokens, span_p, speaker, span_rng));
    request_piece.push_back(pieces.size());
    pieces.emplace_back();
    tok = e.span.token_end;
    frame = e.frame_end;
  }
  copy_until(static_cast<int>(utt.tokens.size()));

  // Original entity spans that were not edited keep their (shifted) positions.
  for (const auto& s : utt.entity_spans) {
    const bool edited = std::any_of(plan.edits.begin(), plan.edits.end(), [&](const PlannedEdit& e) {
      return s.token_start < e.span.token_end && e.span.token_start < s.token_end;
    });
    if (edited) continue;
    int shift = 0;
    for (const auto& e : plan.edits)
      if (e.span.token_end <= s.token_start)
        shift += static_cast<int>(e.replacement.size()) - (e.span.token_end - e.span.token_start);
    out.entity_spans.push_back({s.type, s.token_start + shift, s.token_end + shift});
  }
  std::sort(out.entity_spans.begin(), out.entity_spans.end(),
            [](const auto& a, const auto& b) { return a.token_start < b.token_start; });

  const auto regenerated = backbone::reconstruct_many(model, requests, flow::IntegrationSpec::forward(frame_steps));
  for (std::size_t i = 0; i < requests.size(); ++i) pieces[request_piece[i]] = regenerated[i];
  out.frames.resize(out_frame, utt.frames.cols());
  Eigen::Index row = 0;
  for (const auto& p : pieces) {
    out.frames.middleRows(row, p.rows()) = p;
    row += p.rows();
  }
  out.duration_s = utt.duration_s + (out_frame - utt.num_frames()) / params.config.frame_rate;
  out.check();
  return out;
}

SpeakerSource parse_speaker_source(const std::string& s) {
  if (s == "original") return SpeakerSource::Original;
  if (s == "anonymized") return SpeakerSource::Anonymized;
  throw ConfigError("speaker source must be original or anonymized, got '" + s + "'");
}

json to_json(const EditReport& r) {
  json spans = json::array(), reps = json::array();
  for (const auto& e : r.edits) {
    spans.push_back({{"type", world::to_string(e.span.type)}, {"start", e.span.token_start}, {"end", e.span.token_end},
                     {"source", e.source}});
    reps.push_back(e.replacement);
  }
  return {{"utterance_id", r.utterance_id}, {"spans", spans}, {"replacements", reps}, {"status", r.status},
          {"errors", r.errors}};
}

SecaResult anonymize_content(const backbone::BackboneModel& model, const world::WorldParams& params,
                             const world::Dataset& ds, const ReplacementPool& pool, const world::Gazetteer& gazetteer,
                             const SecaOptions& options, Rng& rng, const std::map<std::string, VectorXd>* targets) {
  if (options.p_asr < 0.0 || options.p_asr > 1.0) throw RejectedInput("anonymize_content: p_asr must lie in [0, 1]");
  if (options.speaker_source == SpeakerSource::Anonymized && !targets)
    throw RejectedInput("anonymize_content: anonymized speaker source needs the identity mapping");
  SecaResult out;
  out.dataset.speakers = ds.speakers;
  for (const auto& u : ds.utterances) {
    Rng urng = rng.fork(u.id);
    std::vector<int> transcript = u.tokens;
    if (options.p_asr > 0.0) {
      Rng asr = urng.fork("asr");
      for (auto& t : transcript)
        if (asr.bernoulli(options.p_asr)) t = static_cast<int>(asr.integer(0, params.V() - 1));
    }
    const auto spans = detect_pii(transcript, gazetteer);
    EditReport report;
    report.utterance_id = u.id;
    if (spans.empty()) {
      report.status = "unchanged";
      out.dataset.utterances.push_back(u);
      out.reports.push_back(std::move(report));
      continue;
    }
    Rng match_rng = urng.fork("match");
    EditPlan plan = plan_edits(u, spans, pool, match_rng);
    // Source text as recognized, so self-replacement exclusion sees the transcript.
    for (auto& e : plan.edits)
      e.source.assign(transcript.begin() + e.span.token_start, transcript.begin() + e.span.token_end);
    VectorXd speaker;
    if (options.speaker_source == SpeakerSource::Anonymized) {
      const auto it = targets->find(u.id);
      if (it == targets->end()) throw DataError("anonymize_content: no anonymized identity for " + u.id);
      speaker = it->second;
    } else {
      speaker = world::oracle_extract_speaker(u, params);
    }
    Rng edit_rng = urng.fork("edit");
    try {
      out.dataset.utterances.push_back(apply_edits(model, params, u, plan, speaker, options.frame_steps, edit_rng));
    } catch (const NumericalDivergence& e) {
      throw NumericalDivergence("utterance " + u.id + ": " + e.what(), e.step());
    }
    report.edits = plan.edits;
    report.errors = plan.errors;
    report.status = plan.edits.empty() ? "unchanged" : plan.errors.empty() ? "edited" : "partial";
    out.plans[u.id] = std::move(plan);
    out.reports.push_back(std::move(report));
  }
  return out;
}

void save_reports(const std::filesystem::path& path, const std::vector<EditReport>& reports) {
  std::string s;
  for (const auto& r : reports) s += to_json(r).dump() + "\n";
  write_file(path, s);
}

double span_recovery_error(const world::Utterance& original, const world::Utterance& edited, const EditPlan& plan,
                           const world::WorldParams& params, const VectorXd& speaker) {
  const auto recovered = world::oracle_recover_tokens(edited.frames, edited.p_norm(), speaker, params);
  const auto new_tokens = edited.frame_tokens();
  std::vector<bool> pii(original.tokens.size(), false);
  for (const auto& s : original.entity_spans)
    for (int k = s.token_start; k < s.token_end; ++k) pii[static_cast<std::size_t>(k)] = true;
  std::size_t total = 0, errors = 0;
  int shift = 0;
  std::vector<bool> covered(original.tokens.size(), false);
  for (const auto& e : plan.edits) {
    bool touches_pii = false;
    for (int k = e.span.token_start; k < e.span.token_end; ++k) {
      covered[static_cast<std::size_t>(k)] = true;
      touches_pii = touches_pii || pii[static_cast<std::size_t>(k)];
    }
    const int first = e.span.token_start + shift;
    const int last = first + static_cast<int>(e.replacement.size());
    if (touches_pii) {
      for (int f = edited.token_frames[static_cast<std::size_t>(first)].start;
           f < edited.token_frames[static_cast<std::size_t>(last - 1)].end; ++f) {
        ++total;
        errors += recovered[static_cast<std::size_t>(f)] != new_tokens[static_cast<std::size_t>(f)];
      }
    }
    shift += static_cast<int>(e.replacement.size()) - (e.span.token_end - e.span.token_start);
  }
  for (std::size_t k = 0; k < original.tokens.size(); ++k)
    if (pii[k] && !covered[k]) {
      const auto n = static_cast<std::size_t>(original.token_frames[k].size());
      total += n;
      errors += n;
    }
  return total ? static_cast<double>(errors) / static_cast<double>(total) : 0.0;
}

double boundary_discontinuity(const std::vector<std::pair<const world::Utterance*, const EditPlan*>>& edited) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [u, plan] : edited) {
    // Boundaries in the edited utterance: recompute from its alignment via the spans it carries.
    int shift = 0;
    for (const auto& e : plan->edits) {
      const int new_frames = [&] {
        int f = 0;
        const int start = e.span.token_start + shift;
        for (int k = 0; k < static_cast<int>(e.replacement.size()); ++k)
          f += u->token_frames[static_cast<std::size_t>(start + k)].size();
        return f;
      }();
      const int start = u->token_frames[static_cast<std::size_t>(e.span.token_start + shift)].start;
      const int end = start + new_frames;
      for (int b : {start, end})
        if (b > 0 && b < u->num_frames()) {
          sum += (u->frames.row(b) - u->frames.row(b - 1)).squaredNorm();
          ++n;
        }
      shift += static_cast<int>(e.replacement.size()) - (e.span.token_end - e.span.token_start);
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

double baseline_discontinuity(const std::vector<const world::Utterance*>& unedited, std::size_t samples, Rng& rng) {
  std::vector<const world::Utterance*> usable;
  for (const auto* u : unedited)
    if (u->num_frames() >= 2) usable.push_back(u);
  if (usable.empty() || samples == 0) throw RejectedInput("baseline_discontinuity: no utterance with two frames");
  double sum = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const auto* u = usable[rng.index(usable.size())];
    const auto b = static_cast<Eigen::Index>(rng.integer(1, u->num_frames() - 1));
    sum += (u->frames.row(b) - u->frames.row(b - 1)).squaredNorm();
  }
  return sum / static_cast<double>(samples);
}

}  // namespace f3va::seca
