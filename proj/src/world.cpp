#include "f3va/world/world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "f3va/backbone/pitch.hpp"
#include "f3va/errors.hpp"

namespace f3va::world {

std::string_view to_string(Gender g) { return g == Gender::Male ? "male" : "female"; }

std::string_view to_string(EntityType t) {
  switch (t) {
    case EntityType::PER: return "PER";
    case EntityType::LOC: return "LOC";
    case EntityType::ORG: return "ORG";
    case EntityType::MISC: return "MISC";
  }
  return "?";
}

Gender parse_gender(std::string_view s) {
  if (s == "male") return Gender::Male;
  if (s == "female") return Gender::Female;
  throw DataError("unknown gender '" + std::string(s) + "'");
}

EntityType parse_entity_type(std::string_view s) {
  for (int k = 0; k < kEntityTypes; ++k)
    if (to_string(static_cast<EntityType>(k)) == s) return static_cast<EntityType>(k);
  throw DataError("unknown entity type '" + std::string(s) + "'");
}

void WorldConfig::validate() const {
  if (speaker_dim < 1 || frame_dim < 1 || content_dim < 1) throw ConfigError("world: dimensions must be positive");
  if (frame_dim < speaker_dim + 1) throw ConfigError("world: frame_dim must be at least speaker_dim + 1");
  if (n_common_tokens < 1 || pii_tokens_per_type < 1) throw ConfigError("world: vocabulary needs common and PII tokens");
  if (noise_sigma < 0.0 || feature_noise < 0.0) throw ConfigError("world: noise scales must be >= 0");
  if (!(male_pitch_min_hz > 0.0 && male_pitch_min_hz <= male_pitch_max_hz && male_pitch_max_hz < female_pitch_min_hz &&
        female_pitch_min_hz <= female_pitch_max_hz))
    throw ConfigError("world: pitch ranges must be positive, ordered and male below female");
  if (!(min_duration_s > 0.0 && min_duration_s <= max_duration_s)) throw ConfigError("world: bad duration range");
  if (frame_rate <= 0.0 || max_frames_per_token < 1 || max_entity_len < 1 || lexicon_tokens_per_type < 1 ||
      lexicon_entities_per_type < 1 || pool_entries_per_type < 0 || style_concentration <= 0.0)
    throw ConfigError("world: counts and rates must be positive");
  if (unvoiced_prob < 0.0 || unvoiced_prob > 1.0 || pii_utterance_prob < 0.0 || pii_utterance_prob > 1.0)
    throw ConfigError("world: probabilities must lie in [0, 1]");
}

std::optional<EntityType> WorldParams::token_type(int token) const {
  const int c = config.n_common_tokens;
  if (token < c || token >= config.vocab_size()) return std::nullopt;
  return static_cast<EntityType>((token - c) / config.pii_tokens_per_type);
}

int WorldParams::pii_token(EntityType type, int k) const {
  return config.n_common_tokens + static_cast<int>(type) * config.pii_tokens_per_type + k;
}

void WorldParams::finalize() {
  const auto& c = config;
  c.validate();
  if (content_imprint.rows() != c.frame_dim || content_imprint.cols() != c.vocab_size() ||
      pitch_imprint.size() != c.frame_dim || speaker_imprint.rows() != c.frame_dim ||
      speaker_imprint.cols() != c.speaker_dim || token_embedding.rows() != c.content_dim ||
      token_embedding.cols() != c.vocab_size() || gender_axis.size() != c.speaker_dim)
    throw ConfigError("world: matrix shapes disagree with the configuration");
  Eigen::JacobiSVD<MatrixXd> svd(speaker_imprint);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) <= 1e-9 * sv(0))
    throw ConfigError("world: speaker imprint matrix C is rank deficient");
  speaker_pinv_ = speaker_imprint.completeOrthogonalDecomposition().pseudoInverse();
}

double WorldParams::min_content_separation() const {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < content_imprint.cols(); ++i)
    for (Eigen::Index j = i + 1; j < content_imprint.cols(); ++j)
      best = std::min(best, (content_imprint.col(i) - content_imprint.col(j)).norm());
  return best;
}

WorldParams make_world_params(const WorldConfig& config, Rng& rng) {
  config.validate();
  WorldParams p;
  p.config = config;
  p.seed = rng.seed();
  const int F = config.frame_dim, D = config.speaker_dim, V = config.vocab_size();
  p.content_imprint = rng.normal_matrix(F, V);
  p.pitch_imprint = config.pitch_imprint_scale * rng.normal_matrix(F, 1).col(0);
  p.speaker_imprint = config.speaker_imprint_scale * rng.normal_matrix(F, D);
  p.token_embedding = rng.normal_matrix(config.content_dim, V);
  p.gender_axis = rng.normal_matrix(D, 1).col(0).normalized();
  // Keep token imprints separated by 6 sigma sqrt(F) so clean frames decode exactly.
  const double margin = 6.0 * config.noise_sigma * std::sqrt(static_cast<double>(F));
  const double sep = p.min_content_separation();
  if (V > 1 && sep < margin) p.content_imprint *= 1.05 * margin / sep;
  p.finalize();
  return p;
}

VectorXd sample_speaker_embedding(const WorldParams& params, Gender gender, Rng& rng) {
  const double sign = gender == Gender::Male ? 1.0 : -1.0;
  VectorXd s = sign * params.config.gender_offset * params.gender_axis + rng.normal_matrix(params.D(), 1).col(0);
  return s.normalized();
}

MatrixXd synthesize_frames(const WorldParams& params, const std::vector<int>& frame_tokens, const VectorXd& p_norm,
                           const VectorXd& speaker, Rng& rng) {
  const auto T = static_cast<Eigen::Index>(frame_tokens.size());
  if (p_norm.size() != T) throw RejectedInput("synthesize_frames: pitch length differs from frame count");
  if (speaker.size() != params.D()) throw RejectedInput("synthesize_frames: speaker dimension mismatch");
  const VectorXd identity = params.speaker_imprint * speaker;
  MatrixXd x(T, params.F());
  for (Eigen::Index t = 0; t < T; ++t) {
    const int tok = frame_tokens[static_cast<std::size_t>(t)];
    if (tok < 0 || tok >= params.V()) throw RejectedInput("synthesize_frames: token out of range");
    VectorXd row = params.content_imprint.col(tok) + p_norm(t) * params.pitch_imprint + identity;
    for (Eigen::Index f = 0; f < row.size(); ++f) row(f) += params.config.noise_sigma * rng.normal();
    x.row(t) = row.transpose();
  }
  return x;
}

namespace {

VectorXd draw_style(const WorldParams& p, Rng& rng) {
  VectorXd style = VectorXd::Zero(p.V());
  std::gamma_distribution<double> gamma(p.config.style_concentration, 1.0);
  for (int k = 0; k < p.config.n_common_tokens; ++k) style(k) = gamma(rng.engine()) + 1e-12;
  return style / style.sum();
}

int draw_token(const VectorXd& style, Rng& rng) {
  double u = rng.uniform();
  for (Eigen::Index k = 0; k < style.size(); ++k) {
    u -= style(k);
    if (u < 0.0) return static_cast<int>(k);
  }
  // Rounding residue: fall back to the last token with mass.
  for (Eigen::Index k = style.size() - 1; k >= 0; --k)
    if (style(k) > 0.0) return static_cast<int>(k);
  return 0;
}

void assign_lexicons(const WorldParams& p, std::vector<Speaker>& speakers, Rng& rng) {
  const auto& c = p.config;
  const int per = std::min(c.lexicon_tokens_per_type, c.pii_tokens_per_type);
  const bool exclusive = static_cast<int>(speakers.size()) * per <= c.pii_tokens_per_type;
  for (int ty = 0; ty < kEntityTypes; ++ty) {
    const auto type = static_cast<EntityType>(ty);
    std::vector<int> all(static_cast<std::size_t>(c.pii_tokens_per_type));
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng.engine());
    for (std::size_t i = 0; i < speakers.size(); ++i) {
      std::vector<int> owned;
      if (exclusive) {
        for (int k = 0; k < per; ++k) owned.push_back(p.pii_token(type, all[i * per + k]));
      } else {
        std::vector<int> pick = all;
        std::shuffle(pick.begin(), pick.end(), rng.engine());
        for (int k = 0; k < per; ++k) owned.push_back(p.pii_token(type, pick[static_cast<std::size_t>(k)]));
      }
      auto& lex = speakers[i].pii_lexicon[static_cast<std::size_t>(ty)];
      for (int e = 0; e < c.lexicon_entities_per_type; ++e) {
        const auto len = rng.integer(1, c.max_entity_len);
        std::vector<int> entity;
        for (int k = 0; k < len; ++k) entity.push_back(owned[rng.index(owned.size())]);
        lex.push_back(std::move(entity));
      }
    }
  }
}

/// Places entity tokens into `tokens`, keeping at least one non-entity token between spans.
bool place_span(std::vector<int>& tokens, std::vector<EntitySpan>& spans, EntityType type,
                const std::vector<int>& entity, Rng& rng) {
  const int n = static_cast<int>(tokens.size());
  const int len = static_cast<int>(entity.size());
  if (len > n) return false;
  for (int attempt = 0; attempt < 32; ++attempt) {
    const int start = static_cast<int>(rng.integer(0, n - len));
    const int end = start + len;
    bool clash = false;
    for (const auto& s : spans)
      if (start <= s.token_end && s.token_start <= end) clash = true;
    if (clash) continue;
    std::copy(entity.begin(), entity.end(), tokens.begin() + start);
    spans.push_back({type, start, end});
    std::sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) { return a.token_start < b.token_start; });
    return true;
  }
  return false;
}

Utterance make_utterance(const WorldParams& p, const Speaker& spk, const std::string& id, Rng& rng) {
  const auto& c = p.config;
  Utterance u;
  u.id = id;
  u.speaker_id = spk.id;
  u.gender = spk.gender;
  u.duration_s = rng.uniform(c.min_duration_s, c.max_duration_s);
  const int T = std::max(1, static_cast<int>(std::lround(u.duration_s * c.frame_rate)));

  int covered = 0;
  while (covered < T) {
    const int len = std::min(static_cast<int>(rng.integer(1, c.max_frames_per_token)), T - covered);
    u.token_frames.push_back({covered, covered + len});
    u.tokens.push_back(draw_token(spk.style, rng));
    covered += len;
  }

  if (rng.bernoulli(c.pii_utterance_prob)) {
    const int n_spans = rng.bernoulli(0.3) ? 2 : 1;
    for (int k = 0; k < n_spans; ++k) {
      const auto ty = static_cast<std::size_t>(rng.integer(0, kEntityTypes - 1));
      const auto& lex = spk.pii_lexicon[ty];
      if (lex.empty()) continue;
      place_span(u.tokens, u.entity_spans, static_cast<EntityType>(ty), lex[rng.index(lex.size())], rng);
    }
  }

  u.f0_hz.resize(static_cast<std::size_t>(T));
  for (auto& f : u.f0_hz)
    f = rng.bernoulli(c.unvoiced_prob) ? 0.0 : spk.base_pitch_hz * std::exp(c.pitch_jitter * rng.normal());
  u.frames = synthesize_frames(p, u.frame_tokens(), u.p_norm(), spk.embedding, rng);
  return u;
}

}  // namespace

Dataset generate_world(const WorldParams& params, int n_speakers, int utts_per_speaker, Rng& rng,
                       const std::string& id_prefix) {
  if (n_speakers < 2 || n_speakers % 2 != 0)
    throw RejectedInput("generate_world: n_speakers must be even and >= 2 (gender balance)");
  if (utts_per_speaker < 2) throw RejectedInput("generate_world: at least two utterances per speaker");
  if (params.speaker_pinv().size() == 0) throw ConfigError("generate_world: world parameters not finalized");
  const auto& c = params.config;
  Dataset ds;
  for (int i = 0; i < n_speakers; ++i) {
    Rng srng = rng.fork(static_cast<std::uint64_t>(i));
    Speaker s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%04d", id_prefix.c_str(), i);
    s.id = buf;
    s.gender = i % 2 == 0 ? Gender::Male : Gender::Female;
    s.embedding = sample_speaker_embedding(params, s.gender, srng);
    s.base_pitch_hz = s.gender == Gender::Male ? srng.uniform(c.male_pitch_min_hz, c.male_pitch_max_hz)
                                               : srng.uniform(c.female_pitch_min_hz, c.female_pitch_max_hz);
    s.style = draw_style(params, srng);
    ds.speakers.push_back(std::move(s));
  }
  Rng lex_rng = rng.fork("lexicon");
  assign_lexicons(params, ds.speakers, lex_rng);
  for (int i = 0; i < n_speakers; ++i) {
    const auto& spk = ds.speakers[static_cast<std::size_t>(i)];
    for (int k = 0; k < utts_per_speaker; ++k) {
      Rng urng = rng.fork("utt").fork(static_cast<std::uint64_t>(i) * 100003u + static_cast<std::uint64_t>(k));
      char buf[16];
      std::snprintf(buf, sizeof(buf), "-%03d", k);
      ds.utterances.push_back(make_utterance(params, spk, spk.id + buf, urng));
    }
  }
  return ds;
}

std::vector<PoolEntry> make_replacement_pool(const WorldParams& params, Rng& rng) {
  const auto& c = params.config;
  std::vector<PoolEntry> pool;
  for (int ty = 0; ty < kEntityTypes; ++ty) {
    for (int k = 0; k < c.pool_entries_per_type; ++k) {
      PoolEntry e;
      e.type = static_cast<EntityType>(ty);
      // Cycle lengths so every (type, length) bucket is populated.
      const int len = 1 + k % c.max_entity_len;
      for (int j = 0; j < len; ++j)
        e.tokens.push_back(params.pii_token(e.type, static_cast<int>(rng.integer(0, c.pii_tokens_per_type - 1))));
      pool.push_back(std::move(e));
    }
  }
  return pool;
}

Gazetteer make_gazetteer(const WorldParams& params) {
  Gazetteer g;
  for (int tok = 0; tok < params.V(); ++tok)
    if (auto t = params.token_type(tok)) g[tok] = *t;
  return g;
}

std::vector<int> Utterance::frame_tokens() const {
  const int T = token_frames.empty() ? num_frames() : std::max(num_frames(), token_frames.back().end);
  std::vector<int> out(static_cast<std::size_t>(T), 0);
  for (std::size_t k = 0; k < token_frames.size() && k < tokens.size(); ++k)
    for (int t = token_frames[k].start; t < token_frames[k].end; ++t)
      out[static_cast<std::size_t>(t)] = tokens[k];
  return out;
}

VectorXd Utterance::p_norm() const { return backbone::normalized_pitch_or_zeros(f0_hz); }

void Utterance::check() const {
  const int T = num_frames();
  if (duration_s <= 0.0) throw DataError("utterance " + id + ": duration must be positive");
  if (token_frames.size() != tokens.size()) throw DataError("utterance " + id + ": alignment/token count mismatch");
  if (static_cast<int>(f0_hz.size()) != T) throw DataError("utterance " + id + ": f0 length differs from frames");
  int expect = 0;
  for (const auto& r : token_frames) {
    if (r.start != expect || r.end <= r.start) throw DataError("utterance " + id + ": alignment has gaps or overlaps");
    expect = r.end;
  }
  if (expect != T) throw DataError("utterance " + id + ": alignment does not cover every frame");
  for (const auto& s : entity_spans)
    if (s.token_start < 0 || s.token_start >= s.token_end || s.token_end > static_cast<int>(tokens.size()))
      throw DataError("utterance " + id + ": entity span out of bounds");
}

const Speaker& Dataset::speaker(const std::string& id) const {
  for (const auto& s : speakers)
    if (s.id == id) return s;
  throw DataError("unknown speaker " + id);
}

std::map<std::string, std::vector<std::size_t>> Dataset::utterances_by_speaker() const {
  std::map<std::string, std::vector<std::size_t>> m;
  for (std::size_t i = 0; i < utterances.size(); ++i) m[utterances[i].speaker_id].push_back(i);
  return m;
}

VectorXd oracle_extract_speaker(const MatrixXd& frames, const std::vector<int>& frame_tokens, const VectorXd& p_norm,
                                const WorldParams& params) {
  const auto T = frames.rows();
  if (T == 0) throw RejectedInput("oracle_extract_speaker: no frames");
  if (frames.cols() != params.F() || static_cast<Eigen::Index>(frame_tokens.size()) != T || p_norm.size() != T)
    throw RejectedInput("oracle_extract_speaker: dimension mismatch");
  VectorXd mean = VectorXd::Zero(params.F());
  for (Eigen::Index t = 0; t < T; ++t)
    mean += frames.row(t).transpose() - params.content_imprint.col(frame_tokens[static_cast<std::size_t>(t)]) -
            p_norm(t) * params.pitch_imprint;
  mean /= static_cast<double>(T);
  return params.speaker_pinv() * mean;
}

VectorXd oracle_extract_speaker(const Utterance& utt, const WorldParams& params) {
  return oracle_extract_speaker(utt.frames, utt.frame_tokens(), utt.p_norm(), params);
}

std::vector<int> oracle_recover_tokens(const MatrixXd& frames, const VectorXd& p_norm, const VectorXd& speaker,
                                       const WorldParams& params) {
  if (frames.cols() != params.F() || p_norm.size() != frames.rows() || speaker.size() != params.D())
    throw RejectedInput("oracle_recover_tokens: dimension mismatch");
  const VectorXd identity = params.speaker_imprint * speaker;
  std::vector<int> out(static_cast<std::size_t>(frames.rows()));
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    const VectorXd r = frames.row(t).transpose() - p_norm(t) * params.pitch_imprint - identity;
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index v = 0; v < params.V(); ++v) {
      const double d = (r - params.content_imprint.col(v)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = v;
      }
    }
    out[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return out;
}

double token_error_fraction(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (hyp.size() != ref.size()) throw RejectedInput("token_error_fraction: length mismatch");
  if (ref.empty()) return 0.0;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) errors += hyp[i] != ref[i];
  return static_cast<double>(errors) / static_cast<double>(ref.size());
}

}  // namespace f3va::world
