#include "f3va/world/dataset_io.hpp"

#include <sstream>

#include "f3va/errors.hpp"
#include "f3va/textio.hpp"

namespace f3va::world {

using nlohmann::json;

namespace {

json vec_json(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(round9(v(i)));
  return a;
}

json mat_json(const MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

VectorXd json_vec(const json& a) {
  VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

MatrixXd json_mat(const json& a, Eigen::Index cols_if_empty = 0) {
  if (a.empty()) return MatrixXd(0, cols_if_empty);
  const auto cols = static_cast<Eigen::Index>(a[0].size());
  MatrixXd m(static_cast<Eigen::Index>(a.size()), cols);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (static_cast<Eigen::Index>(a[i].size()) != cols) throw DataError("ragged matrix in dataset file");
    for (Eigen::Index j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), j) = a[i][static_cast<std::size_t>(j)].get<double>();
  }
  return m;
}

json config_json(const WorldConfig& c) {
  return {{"speaker_dim", c.speaker_dim},
          {"frame_dim", c.frame_dim},
          {"content_dim", c.content_dim},
          {"n_common_tokens", c.n_common_tokens},
          {"pii_tokens_per_type", c.pii_tokens_per_type},
          {"noise_sigma", c.noise_sigma},
          {"feature_noise", c.feature_noise},
          {"gender_offset", c.gender_offset},
          {"pitch_imprint_scale", c.pitch_imprint_scale},
          {"speaker_imprint_scale", c.speaker_imprint_scale},
          {"male_pitch_hz", {c.male_pitch_min_hz, c.male_pitch_max_hz}},
          {"female_pitch_hz", {c.female_pitch_min_hz, c.female_pitch_max_hz}},
          {"pitch_jitter", c.pitch_jitter},
          {"unvoiced_prob", c.unvoiced_prob},
          {"duration_s", {c.min_duration_s, c.max_duration_s}},
          {"frame_rate", c.frame_rate},
          {"max_frames_per_token", c.max_frames_per_token},
          {"pii_utterance_prob", c.pii_utterance_prob},
          {"lexicon_tokens_per_type", c.lexicon_tokens_per_type},
          {"lexicon_entities_per_type", c.lexicon_entities_per_type},
          {"max_entity_len", c.max_entity_len},
          {"style_concentration", c.style_concentration},
          {"pool_entries_per_type", c.pool_entries_per_type}};
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_range(const json& j, const char* key, double& lo, double& hi) {
  if (!j.contains(key)) return;
  const auto& r = j.at(key);
  if (!r.is_array() || r.size() != 2) throw ConfigError(std::string("world config: ") + key + " must be [lo, hi]");
  lo = r[0].get<double>();
  hi = r[1].get<double>();
}

}  // namespace

WorldConfig world_config_from_json(const json& j) {
  WorldConfig c;
  read_opt(j, "speaker_dim", c.speaker_dim);
  read_opt(j, "frame_dim", c.frame_dim);
  read_opt(j, "content_dim", c.content_dim);
  read_opt(j, "n_common_tokens", c.n_common_tokens);
  read_opt(j, "pii_tokens_per_type", c.pii_tokens_per_type);
  read_opt(j, "noise_sigma", c.noise_sigma);
  read_opt(j, "feature_noise", c.feature_noise);
  read_opt(j, "gender_offset", c.gender_offset);
  read_opt(j, "pitch_imprint_scale", c.pitch_imprint_scale);
  read_opt(j, "speaker_imprint_scale", c.speaker_imprint_scale);
  read_range(j, "male_pitch_hz", c.male_pitch_min_hz, c.male_pitch_max_hz);
  read_range(j, "female_pitch_hz", c.female_pitch_min_hz, c.female_pitch_max_hz);
  read_opt(j, "pitch_jitter", c.pitch_jitter);
  read_opt(j, "unvoiced_prob", c.unvoiced_prob);
  read_range(j, "duration_s", c.min_duration_s, c.max_duration_s);
  read_opt(j, "frame_rate", c.frame_rate);
  read_opt(j, "max_frames_per_token", c.max_frames_per_token);
  read_opt(j, "pii_utterance_prob", c.pii_utterance_prob);
  read_opt(j, "lexicon_tokens_per_type", c.lexicon_tokens_per_type);
  read_opt(j, "lexicon_entities_per_type", c.lexicon_entities_per_type);
  read_opt(j, "max_entity_len", c.max_entity_len);
  read_opt(j, "style_concentration", c.style_concentration);
  read_opt(j, "pool_entries_per_type", c.pool_entries_per_type);
  c.validate();
  return c;
}

json to_json(const WorldConfig& c) { return config_json(c); }

json to_json(const WorldParams& p) {
  return {{"config", config_json(p.config)},  {"seed", p.seed},
          {"A", mat_json(p.content_imprint)}, {"B", vec_json(p.pitch_imprint)},
          {"C", mat_json(p.speaker_imprint)}, {"token_embedding", mat_json(p.token_embedding)},
          {"gender_axis", vec_json(p.gender_axis)}};
}

WorldParams world_from_json(const json& j) {
  try {
    WorldParams p;
    p.config = world_config_from_json(j.at("config"));
    p.seed = j.at("seed").get<std::uint64_t>();
    p.content_imprint = json_mat(j.at("A"));
    p.pitch_imprint = json_vec(j.at("B"));
    p.speaker_imprint = json_mat(j.at("C"));
    p.token_embedding = json_mat(j.at("token_embedding"));
    p.gender_axis = json_vec(j.at("gender_axis"));
    p.finalize();
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("world.json: ") + e.what());
  }
}

json to_json(const Speaker& s) {
  json lex = json::object();
  for (int t = 0; t < kEntityTypes; ++t)
    lex[std::string(to_string(static_cast<EntityType>(t)))] = s.pii_lexicon[static_cast<std::size_t>(t)];
  return {{"id", s.id},
          {"gender", to_string(s.gender)},
          {"embedding", vec_json(s.embedding)},
          {"base_pitch_hz", round9(s.base_pitch_hz)},
          {"style", vec_json(s.style)},
          {"pii_lexicon", lex}};
}

Speaker speaker_from_json(const json& j) {
  try {
    Speaker s;
    s.id = j.at("id").get<std::string>();
    s.gender = parse_gender(j.at("gender").get<std::string>());
    s.embedding = json_vec(j.at("embedding"));
    s.base_pitch_hz = j.at("base_pitch_hz").get<double>();
    s.style = json_vec(j.at("style"));
    if (j.contains("pii_lexicon"))
      for (const auto& [key, val] : j.at("pii_lexicon").items())
        s.pii_lexicon[static_cast<std::size_t>(parse_entity_type(key))] = val.get<std::vector<std::vector<int>>>();
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("speaker record: ") + e.what());
  }
}

json to_json(const Utterance& u) {
  json spans = json::array();
  for (const auto& s : u.entity_spans) spans.push_back({{"type", to_string(s.type)}, {"start", s.token_start}, {"end", s.token_end}});
  json align = json::array();
  for (const auto& r : u.token_frames) align.push_back({r.start, r.end});
  json f0 = json::array();
  for (double f : u.f0_hz) f0.push_back(round9(f));
  return {{"id", u.id},
          {"speaker_id", u.speaker_id},
          {"gender", to_string(u.gender)},
          {"duration_s", round9(u.duration_s)},
          {"tokens", u.tokens},
          {"entity_spans", spans},
          {"f0_hz", f0},
          {"token_frames", align},
          {"frames", mat_json(u.frames)}};
}

Utterance utterance_from_json(const json& j) {
  try {
    Utterance u;
    u.id = j.at("id").get<std::string>();
    u.speaker_id = j.at("speaker_id").get<std::string>();
    u.gender = parse_gender(j.at("gender").get<std::string>());
    u.duration_s = j.at("duration_s").get<double>();
    u.tokens = j.at("tokens").get<std::vector<int>>();
    for (const auto& s : j.at("entity_spans"))
      u.entity_spans.push_back(
          {parse_entity_type(s.at("type").get<std::string>()), s.at("start").get<int>(), s.at("end").get<int>()});
    u.f0_hz = j.at("f0_hz").get<std::vector<double>>();
    for (const auto& r : j.at("token_frames")) u.token_frames.push_back({r.at(0).get<int>(), r.at(1).get<int>()});
    u.frames = json_mat(j.at("frames"));
    u.check();
    return u;
  } catch (const json::exception& e) {
    throw DataError(std::string("utterance record: ") + e.what());
  }
}

void save_world(const std::filesystem::path& path, const WorldParams& params) {
  write_file(path, to_json(params).dump() + "\n");
}

WorldParams load_world(const std::filesystem::path& path) {
  try {
    return world_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

namespace {

template <typename T, typename F>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items, F&& encode) {
  std::string out;
  for (const auto& item : items) {
    out += encode(item).dump();
    out += '\n';
  }
  write_file(path, out);
}

template <typename F>
void for_each_record(const std::filesystem::path& path, F&& f) {
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    ++n;
    try {
      f(json::parse(line));
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  write_jsonl(dir / "speakers.jsonl", ds.speakers, [](const Speaker& s) { return to_json(s); });
  write_jsonl(dir / "utterances.jsonl", ds.utterances, [](const Utterance& u) { return to_json(u); });
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  for_each_record(dir / "speakers.jsonl", [&](const json& j) { ds.speakers.push_back(speaker_from_json(j)); });
  for_each_record(dir / "utterances.jsonl", [&](const json& j) { ds.utterances.push_back(utterance_from_json(j)); });
  return ds;
}

void save_pool(const std::filesystem::path& path, const std::vector<PoolEntry>& pool) {
  write_jsonl(path, pool, [](const PoolEntry& e) {
    return json{{"type", to_string(e.type)}, {"tokens", e.tokens}, {"length", e.length()}};
  });
}

std::vector<PoolEntry> load_pool(const std::filesystem::path& path) {
  std::vector<PoolEntry> pool;
  for_each_record(path, [&](const json& j) {
    PoolEntry e{parse_entity_type(j.at("type").get<std::string>()), j.at("tokens").get<std::vector<int>>()};
    if (j.contains("length") && j.at("length").get<int>() != e.length())
      throw DataError("replacement pool: length field disagrees with token count");
    pool.push_back(std::move(e));
  });
  return pool;
}

void save_gazetteer(const std::filesystem::path& path, const Gazetteer& g) {
  std::vector<std::pair<int, EntityType>> rows(g.begin(), g.end());
  write_jsonl(path, rows, [](const auto& r) { return json{{"token", r.first}, {"type", to_string(r.second)}}; });
}

Gazetteer load_gazetteer(const std::filesystem::path& path) {
  Gazetteer g;
  for_each_record(path, [&](const json& j) {
    g[j.at("token").get<int>()] = parse_entity_type(j.at("type").get<std::string>());
  });
  return g;
}

void round_for_storage(Dataset& ds) {
  const auto r = [](auto& m) { m = m.unaryExpr([](double x) { return round9(x); }); };
  for (auto& s : ds.speakers) {
    r(s.embedding);
    r(s.style);
    s.base_pitch_hz = round9(s.base_pitch_hz);
  }
  for (auto& u : ds.utterances) {
    r(u.frames);
    u.duration_s = round9(u.duration_s);
    for (auto& f : u.f0_hz) f = round9(f);
  }
}

void round_for_storage(WorldParams& p) {
  const auto r = [](auto& m) { m = m.unaryExpr([](double x) { return round9(x); }); };
  r(p.content_imprint);
  r(p.pitch_imprint);
  r(p.speaker_imprint);
  r(p.token_embedding);
  r(p.gender_axis);
  p.finalize();
}

}  // namespace f3va::world
