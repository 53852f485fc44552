#include "f3va/eval/protocol.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "f3va/errors.hpp"
#include "f3va/eval/eer.hpp"
#include "f3va/textio.hpp"

namespace f3va::eval {

Mode parse_mode(const std::string& s) {
  if (s == "acoustic") return Mode::Acoustic;
  if (s == "content") return Mode::Content;
  throw ConfigError("mode must be acoustic or content, got '" + s + "'");
}

Attacker parse_attacker(const std::string& s) {
  if (s == "ignorant") return Attacker::Ignorant;
  if (s == "lazy" || s == "lazy_informed") return Attacker::LazyInformed;
  throw ConfigError("attacker must be ignorant or lazy, got '" + s + "'");
}

std::string to_string(Mode m) { return m == Mode::Acoustic ? "acoustic" : "content"; }
std::string to_string(Attacker a) { return a == Attacker::Ignorant ? "ignorant" : "lazy_informed"; }

TrialList build_trials(const world::Dataset& ds, Mode mode, Rng& rng) {
  TrialList out;
  std::set<world::Gender> genders;
  for (const auto& s : ds.speakers) genders.insert(s.gender);
  if (genders.size() < 2) throw RejectedInput("build_trials: both genders are required for balanced negatives");

  const auto eligible = [&](const world::Utterance& u) {
    if (mode == Mode::Acoustic) return u.duration_s >= kMinTrialDuration && u.duration_s <= kMaxTrialDuration;
    return u.has_pii();
  };
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  std::map<world::Gender, std::vector<std::size_t>> by_gender;
  for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
    const auto& u = ds.utterances[i];
    if (!eligible(u)) continue;
    by_speaker[u.speaker_id].push_back(i);
    by_gender[u.gender].push_back(i);
  }
  if (by_speaker.empty()) {
    out.warnings.push_back("no utterance passes the " + to_string(mode) + " filter; trial list is empty");
    return out;
  }

  for (const auto& spk : ds.speakers) {
    const auto it = by_speaker.find(spk.id);
    if (it == by_speaker.end()) continue;
    const auto& own = it->second;
    if (own.size() < 2) {
      out.warnings.push_back("speaker " + spk.id + " has fewer than two eligible utterances; skipped");
      continue;
    }
    for (std::size_t e : own) {
      std::vector<std::size_t> others;
      for (std::size_t j : own)
        if (j != e) others.push_back(j);
      Rng trng = rng.fork(ds.utterances[e].id);
      const std::size_t p1 = trng.index(others.size());
      std::size_t p2 = p1;
      if (others.size() > 1) {
        p2 = trng.index(others.size() - 1);
        if (p2 >= p1) ++p2;
      }
      out.trials.push_back({spk.id, ds.utterances[others[p1]].id, 1});
      out.trials.push_back({spk.id, ds.utterances[others[p2]].id, 1});

      std::map<world::Gender, std::vector<std::size_t>> negatives;
      for (const auto g : {world::Gender::Male, world::Gender::Female})
        for (std::size_t j : by_gender[g])
          if (ds.utterances[j].speaker_id != spk.id) negatives[g].push_back(j);
      for (const auto g : {world::Gender::Male, world::Gender::Female}) {
        const world::Gender other = g == world::Gender::Male ? world::Gender::Female : world::Gender::Male;
        const auto& pool = negatives[g].empty() ? negatives[other] : negatives[g];
        if (pool.empty()) throw RejectedInput("build_trials: no negative candidates for speaker " + spk.id);
        out.trials.push_back({spk.id, ds.utterances[pool[trng.index(pool.size())]].id, 0});
      }
    }
  }
  return out;
}

void save_trials(const std::filesystem::path& path, const std::vector<Trial>& trials) {
  std::string out;
  for (const auto& t : trials) out += t.enroll_speaker_id + "\t" + t.test_utterance_id + "\t" + std::to_string(t.label) + "\n";
  write_file(path, out);
}

std::vector<Trial> load_trials(const std::filesystem::path& path) {
  std::vector<Trial> trials;
  for (const auto& line : read_lines(path)) {
    std::stringstream ss(line);
    Trial t;
    std::string label;
    if (!std::getline(ss, t.enroll_speaker_id, '\t') || !std::getline(ss, t.test_utterance_id, '\t') ||
        !std::getline(ss, label, '\t'))
      throw DataError("trial file: expected three tab-separated columns");
    if (label != "0" && label != "1") throw DataError("trial file: label must be 0 or 1");
    t.label = label == "1";
    trials.push_back(std::move(t));
  }
  return trials;
}

void save_scores(const std::filesystem::path& path, const std::vector<Trial>& trials, const std::vector<double>& scores) {
  if (trials.size() != scores.size()) throw RejectedInput("save_scores: one score per trial required");
  std::string out;
  for (std::size_t i = 0; i < trials.size(); ++i)
    out += trials[i].enroll_speaker_id + "\t" + trials[i].test_utterance_id + "\t" + std::to_string(trials[i].label) +
           "\t" + format9(scores[i]) + "\n";
  write_file(path, out);
}

VectorXd enrollment_embedding(const std::vector<VectorXd>& embeddings) {
  if (embeddings.empty()) throw RejectedInput("enrollment_embedding: no embeddings");
  VectorXd sum = VectorXd::Zero(embeddings.front().size());
  for (const auto& e : embeddings) {
    if (e.size() != sum.size()) throw RejectedInput("enrollment_embedding: dimension mismatch");
    sum += e;
  }
  return sum / static_cast<double>(embeddings.size());
}

VectorXd content_embedding(const std::vector<int>& tokens, int vocab_size) {
  VectorXd v = VectorXd::Zero(vocab_size);
  for (int t : tokens) {
    if (t < 0 || t >= vocab_size) throw RejectedInput("content_embedding: token out of range");
    v(t) += 1.0;
  }
  const double n = v.norm();
  return n > 0.0 ? VectorXd(v / n) : v;
}

std::map<std::string, VectorXd> content_speaker_model(const std::map<std::string, std::vector<std::vector<int>>>& transcripts,
                                                      int vocab_size) {
  if (transcripts.size() < 2) throw RejectedInput("content_speaker_model: at least two speakers required");
  std::map<std::string, VectorXd> model;
  for (const auto& [spk, utts] : transcripts) {
    VectorXd counts = VectorXd::Zero(vocab_size);
    for (const auto& u : utts)
      for (int t : u) {
        if (t < 0 || t >= vocab_size) throw RejectedInput("content_speaker_model: token out of range");
        counts(t) += 1.0;
      }
    if (counts.sum() == 0.0) throw RejectedInput("content_speaker_model: speaker " + spk + " has empty transcripts");
    model[spk] = counts / counts.norm();
  }
  return model;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"mode", to_string(r.mode)},       {"attacker", to_string(r.attacker)}, {"eer", round9(r.eer)},
          {"n_trials", r.n_trials},          {"n_target", r.n_target},            {"n_nontarget", r.n_nontarget}};
}

namespace {

std::map<std::string, const world::Utterance*> index_utterances(const world::Dataset& ds) {
  std::map<std::string, const world::Utterance*> m;
  for (const auto& u : ds.utterances) m[u.id] = &u;
  return m;
}

}  // namespace

EvalReport run_attack(const world::WorldParams& params, const world::Dataset& original, const world::Dataset& test,
                      const std::vector<Trial>& trials, Attacker attacker, Mode mode, const Reanonymizer& reanonymize,
                      Rng& rng) {
  EvalReport r;
  r.mode = mode;
  r.attacker = attacker;
  std::set<std::string> enroll_ids;
  for (const auto& t : trials) enroll_ids.insert(t.enroll_speaker_id);

  world::Dataset enroll_src;
  for (const auto& u : original.utterances)
    if (enroll_ids.count(u.speaker_id)) enroll_src.utterances.push_back(u);
  enroll_src.speakers = original.speakers;
  if (attacker == Attacker::LazyInformed) {
    if (!reanonymize) throw RejectedInput("run_attack: the lazy-informed attacker needs the anonymization system");
    Rng fresh = rng.fork("lazy-informed");
    enroll_src = reanonymize(enroll_src, fresh);
  }

  std::map<std::string, VectorXd> enroll;
  if (mode == Mode::Acoustic) {
    std::map<std::string, std::vector<VectorXd>> per;
    for (const auto& u : enroll_src.utterances) per[u.speaker_id].push_back(world::oracle_extract_speaker(u, params));
    for (const auto& id : enroll_ids) {
      if (!per.count(id)) throw DataError("run_attack: no enrollment utterances for speaker " + id);
      enroll[id] = enrollment_embedding(per[id]);
    }
  } else {
    std::map<std::string, std::vector<std::vector<int>>> transcripts;
    for (const auto& u : enroll_src.utterances) transcripts[u.speaker_id].push_back(u.tokens);
    enroll = content_speaker_model(transcripts, params.V());
  }

  const auto tests = index_utterances(test);
  std::map<std::string, VectorXd> test_emb;
  for (const auto& t : trials) {
    const auto it = tests.find(t.test_utterance_id);
    if (it == tests.end()) throw DataError("run_attack: unknown test utterance " + t.test_utterance_id);
    if (!test_emb.count(t.test_utterance_id))
      test_emb[t.test_utterance_id] = mode == Mode::Acoustic ? world::oracle_extract_speaker(*it->second, params)
                                                             : content_embedding(it->second->tokens, params.V());
    if (!enroll.count(t.enroll_speaker_id)) throw DataError("run_attack: no enrollment for " + t.enroll_speaker_id);
    r.scored.trials.push_back(t);
    r.scored.scores.push_back(cosine(enroll[t.enroll_speaker_id], test_emb[t.test_utterance_id]));
    (t.label ? r.n_target : r.n_nontarget) += 1;
  }
  r.n_trials = trials.size();
  std::vector<int> labels;
  for (const auto& t : trials) labels.push_back(t.label);
  r.eer = compute_eer(r.scored.scores, labels);
  return r;
}

UtilityReport utility_probes(const world::Dataset& ds, const world::WorldParams& params,
                             const std::map<std::string, VectorXd>& targets) {
  UtilityReport r;
  std::size_t errors = 0, frames = 0;
  double secs = 0.0;
  for (const auto& u : ds.utterances) {
    const auto it = targets.find(u.id);
    if (it == targets.end()) throw DataError("utility_probes: no target identity for utterance " + u.id);
    const auto ref = u.frame_tokens();
    const VectorXd p = u.p_norm();
    const auto hyp = world::oracle_recover_tokens(u.frames, p, it->second, params);
    for (std::size_t i = 0; i < ref.size(); ++i) errors += hyp[i] != ref[i];
    frames += ref.size();
    secs += cosine(world::oracle_extract_speaker(u.frames, ref, p, params), it->second);
    ++r.utterances;
  }
  if (frames) r.token_error_rate = 100.0 * static_cast<double>(errors) / static_cast<double>(frames);
  if (r.utterances) r.secs_proxy = secs / static_cast<double>(r.utterances);
  return r;
}

}  // namespace f3va::eval
