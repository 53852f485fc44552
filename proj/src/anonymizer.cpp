#include "f3va/anonymizer/anonymizer.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "f3va/errors.hpp"
#include "f3va/nn/optim.hpp"
#include "f3va/textio.hpp"

namespace f3va::anonymizer {

using nlohmann::json;

void AnonymizerConfig::validate() const {
  field.validate();
  if (steps < 1 || batch < 1) throw ConfigError("anonymizer: steps and batch must be positive");
  if (!(peak_lr >= 0.0) || !(pct_start > 0.0 && pct_start < 1.0))
    throw ConfigError("anonymizer: bad learning-rate schedule");
}

AnonymizerConfig anonymizer_config_from_json(const json& j) {
  AnonymizerConfig c;
  if (j.contains("level_dims")) c.field.level_dims = j.at("level_dims").get<std::vector<int>>();
  if (j.contains("hidden")) c.field.hidden = j.at("hidden").get<int>();
  if (j.contains("time_dim")) c.field.time_dim = j.at("time_dim").get<int>();
  if (j.contains("steps")) c.steps = j.at("steps").get<int>();
  if (j.contains("batch")) c.batch = j.at("batch").get<int>();
  if (j.contains("peak_lr")) c.peak_lr = j.at("peak_lr").get<double>();
  if (j.contains("pct_start")) c.pct_start = j.at("pct_start").get<double>();
  if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
  c.validate();
  return c;
}

json to_json(const AnonymizerConfig& c) {
  return {{"level_dims", c.field.level_dims}, {"hidden", c.field.hidden},   {"time_dim", c.field.time_dim},
          {"steps", c.steps},                 {"batch", c.batch},           {"peak_lr", c.peak_lr},
          {"pct_start", c.pct_start},         {"weight_decay", c.weight_decay}};
}

std::vector<nn::Tensor> AnonymizerModel::to_tensors() const {
  const auto& c = field.config();
  std::vector<nn::Tensor> out;
  out.push_back(nn::int_tensor("anonymizer/config/level_dims", c.level_dims));
  out.push_back(nn::int_tensor("anonymizer/config/sizes",
                               {c.hidden, c.time_dim, c.activation == nn::Activation::Tanh ? 0 : 1, trained_steps}));
  nn::Tensor meta{"anonymizer/meta/seed_and_hash", {8}, {}};
  // 64-bit values split into 16-bit chunks, exact in float32.
  const auto pack = [&](std::uint64_t v) {
    for (int k = 0; k < 4; ++k) meta.data.push_back(static_cast<float>((v >> (16 * k)) & 0xffff));
  };
  pack(seed);
  pack(data_hash.empty() ? 0 : std::stoull(data_hash, nullptr, 16));
  out.push_back(std::move(meta));
  auto& self = const_cast<AnonymizerModel&>(*this);
  nn::append_parameters(out, "anonymizer/", self.field.parameters());
  return out;
}

AnonymizerModel AnonymizerModel::from_tensors(const std::vector<nn::Tensor>& tensors) {
  nn::UShapedConfig c;
  c.level_dims = nn::tensor_ints(nn::find_tensor(tensors, "anonymizer/config/level_dims"));
  const auto sizes = nn::tensor_ints(nn::find_tensor(tensors, "anonymizer/config/sizes"));
  if (sizes.size() != 4) throw DataError("anonymizer checkpoint: malformed config/sizes");
  c.hidden = sizes[0];
  c.time_dim = sizes[1];
  c.activation = sizes[2] == 0 ? nn::Activation::Tanh : nn::Activation::Identity;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("anonymizer checkpoint: ") + e.what());
  }
  AnonymizerModel m;
  Rng unused(0);
  m.field = nn::UShapedField<float>(c, unused);
  nn::load_parameters(tensors, "anonymizer/", m.field.parameters());
  m.trained_steps = sizes[3];
  const auto& meta = nn::find_tensor(tensors, "anonymizer/meta/seed_and_hash");
  if (meta.data.size() != 8) throw DataError("anonymizer checkpoint: malformed meta");
  const auto unpack = [&](std::size_t off) {
    std::uint64_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint64_t>(meta.data[off + static_cast<std::size_t>(k)]) << (16 * k);
    return v;
  };
  m.seed = unpack(0);
  const std::uint64_t h = unpack(4);
  if (h != 0) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    m.data_hash = buf;
  }
  return m;
}

AnonymizerModel zero_anonymizer(const nn::UShapedConfig& config) {
  AnonymizerModel m;
  Rng unused(0);
  m.field = nn::UShapedField<float>(config, unused);
  for (auto* p : m.field.parameters()) p->value.setZero();
  return m;
}

namespace {

std::string embedding_hash(const MatrixXd& e) {
  std::string bytes(reinterpret_cast<const char*>(e.data()), static_cast<std::size_t>(e.size()) * sizeof(double));
  return content_hash(bytes);
}

}  // namespace

TrainedAnonymizer train_anonymizer(const MatrixXd& embeddings, const AnonymizerConfig& config, Rng& rng) {
  config.validate();
  if (embeddings.cols() < 2) throw RejectedInput("train_anonymizer: need at least two embeddings");
  if (embeddings.rows() != config.field.level_dims.front())
    throw RejectedInput("train_anonymizer: embedding dimension differs from the field input dimension");
  bool distinct = false;
  for (Eigen::Index j = 1; j < embeddings.cols() && !distinct; ++j)
    distinct = embeddings.col(j) != embeddings.col(0);
  if (!distinct) throw RejectedInput("train_anonymizer: need at least two distinct embeddings");
  TrainedAnonymizer out;
  Rng init_rng = rng.fork("init");
  out.model.field = nn::UShapedField<float>(config.field, init_rng);
  out.model.seed = rng.seed();
  out.model.trained_steps = config.steps;
  out.model.data_hash = embedding_hash(embeddings);
  nn::AdamWConfig oc;
  oc.weight_decay = config.weight_decay;
  oc.total_steps = static_cast<std::size_t>(config.steps);
  oc.schedule = nn::OneCycle{config.peak_lr, config.pct_start};
  nn::AdamW<float> opt(oc);
  auto params = out.model.field.parameters();
  const MatrixXf data = embeddings.cast<float>();
  Rng train_rng = rng.fork("train");
  MatrixXf x1(data.rows(), config.batch);
  for (int step = 0; step < config.steps; ++step) {
    for (Eigen::Index j = 0; j < x1.cols(); ++j)
      x1.col(j) = data.col(static_cast<Eigen::Index>(train_rng.index(static_cast<std::size_t>(data.cols()))));
    nn::zero_grad(params);
    const auto r = flow::cfm_loss<float>(out.model.field, x1, train_rng);
    if (!std::isfinite(r.loss)) throw NumericalDivergence("train_anonymizer: non-finite loss", static_cast<std::size_t>(step));
    opt.step(params);
    out.loss_trace.push_back(r.loss);
  }
  return out;
}

namespace {

MatrixXd run_ode(const AnonymizerModel& model, const MatrixXd& x, const flow::IntegrationSpec& spec) {
  if (x.rows() != model.dim()) throw RejectedInput("anonymizer: embedding dimension mismatch");
  if (x.cols() == 0) return x;
  // The state stays in double; only the field is evaluated in float.
  const auto field = [&](const MatrixXd& s, double t) {
    return MatrixXd(model.field.evaluate(MatrixXf(s.cast<float>()), static_cast<float>(t)).cast<double>());
  };
  return flow::integrate<double>(field, x, spec);
}

}  // namespace

MatrixXd encode(const AnonymizerModel& model, const MatrixXd& s_orig, const flow::IntegrationSpec& spec) {
  if (!(spec.t_start == 1.0 && spec.t_end == 0.0)) throw RejectedInput("encode: integration must run from t=1 to t=0");
  return run_ode(model, s_orig, spec);
}

MatrixXd generate(const AnonymizerModel& model, const MatrixXd& z_anon, const flow::IntegrationSpec& spec) {
  if (!(spec.t_start == 0.0 && spec.t_end == 1.0)) throw RejectedInput("generate: integration must run from t=0 to t=1");
  return run_ode(model, z_anon, spec);
}

VectorXd obscure(const VectorXd& z_orig, const VectorXd& z_rand, double w) {
  if (!(w >= -1.0 && w <= 1.0)) throw RejectedInput("obscure: speaker weight must lie in [-1, 1]");
  if (z_orig.size() != z_rand.size()) throw RejectedInput("obscure: dimension mismatch");
  const double a = 1.0 - w;
  return (a * z_rand + w * z_orig) / std::sqrt(a * a + w * w);
}

WeightStrategy WeightStrategy::fixed(double w, Scope scope) {
  WeightStrategy s;
  s.kind = Kind::Fixed;
  s.w = w;
  s.scope = scope;
  s.validate();
  return s;
}

WeightStrategy WeightStrategy::range(double a, double b, Scope scope) {
  WeightStrategy s;
  s.kind = Kind::UniformRange;
  s.a = a;
  s.b = b;
  s.scope = scope;
  s.validate();
  return s;
}

WeightStrategy WeightStrategy::pool(Scope scope) {
  WeightStrategy s;
  s.kind = Kind::PoolSelect;
  s.scope = scope;
  return s;
}

WeightStrategy WeightStrategy::parse(const std::string& text, Scope scope) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  const auto num = [&](const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("strategy: '" + v + "' is not a number");
    return d;
  };
  try {
    if (parts.size() == 2 && parts[0] == "fixed") return fixed(num(parts[1]), scope);
    if (parts.size() == 3 && parts[0] == "range") return range(num(parts[1]), num(parts[2]), scope);
    if (parts.size() == 1 && parts[0] == "pool") return pool(scope);
  } catch (const RejectedInput& e) {
    throw ConfigError(e.what());
  }
  throw ConfigError("strategy: expected fixed:W, range:A:B or pool, got '" + text + "'");
}

std::string WeightStrategy::to_string() const {
  switch (kind) {
    case Kind::Fixed: return "fixed:" + format9(w);
    case Kind::UniformRange: return "range:" + format9(a) + ":" + format9(b);
    case Kind::PoolSelect: return "pool";
  }
  return "?";
}

void WeightStrategy::validate() const {
  if (kind == Kind::Fixed && !(w >= -1.0 && w <= 1.0)) throw RejectedInput("strategy: w must lie in [-1, 1]");
  if (kind == Kind::UniformRange && !(a >= -1.0 && a < b && b <= 1.0))
    throw RejectedInput("strategy: range must satisfy -1 <= a < b <= 1");
}

Scope parse_scope(const std::string& text) {
  if (text == "per_speaker") return Scope::PerSpeaker;
  if (text == "per_utterance") return Scope::PerUtterance;
  throw ConfigError("scope must be per_speaker or per_utterance, got '" + text + "'");
}

std::string to_string(Scope scope) { return scope == Scope::PerSpeaker ? "per_speaker" : "per_utterance"; }

AnonymizedSpeaker anonymize_speaker(const AnonymizerModel* model, const VectorXd& s_orig,
                                    const WeightStrategy& strategy, Rng& rng, int steps, const EmbeddingPool* pool,
                                    const std::string& speaker_id) {
  strategy.validate();
  if (strategy.kind == WeightStrategy::Kind::PoolSelect) {
    if (!pool || pool->empty()) throw RejectedInput("anonymize_speaker: PoolSelect needs a non-empty pool");
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < pool->embeddings.size(); ++i)
      if (pool->speaker_ids[i] != speaker_id) eligible.push_back(i);
    if (eligible.empty()) throw RejectedInput("anonymize_speaker: pool holds only the source speaker");
    return {pool->embeddings[eligible[rng.index(eligible.size())]], std::nullopt};
  }
  if (!model) throw RejectedInput("anonymize_speaker: a trained anonymizer is required");
  const double w = strategy.kind == WeightStrategy::Kind::Fixed ? strategy.w : rng.uniform(strategy.a, strategy.b);
  const VectorXd z_rand = rng.normal_matrix(s_orig.size(), 1).col(0);
  const MatrixXd z_orig = encode(*model, s_orig, flow::IntegrationSpec::backward(steps));
  const VectorXd z_anon = obscure(z_orig.col(0), z_rand, w);
  return {generate(*model, z_anon, flow::IntegrationSpec::forward(steps)).col(0), w};
}

AnonymizedDataset anonymize_dataset(const AnonymizationSystem& sys, const world::Dataset& ds, Rng& rng) {
  if (!sys.backbone || !sys.world) throw RejectedInput("anonymize_dataset: backbone and world parameters are required");
  AnonymizedDataset out;
  out.dataset.speakers = ds.speakers;
  const auto& params = *sys.world;

  std::map<std::string, VectorXd> source;  // utterance id -> oracle embedding
  for (const auto& u : ds.utterances) source[u.id] = world::oracle_extract_speaker(u, params);

  std::map<std::string, AnonymizedSpeaker> per_speaker;
  if (sys.strategy.scope == Scope::PerSpeaker) {
    std::map<std::string, std::pair<VectorXd, int>> sums;
    for (const auto& u : ds.utterances) {
      auto& [sum, n] = sums[u.speaker_id];
      if (n == 0) sum = VectorXd::Zero(params.D());
      sum += source[u.id];
      ++n;
    }
    for (const auto& [spk, acc] : sums) {
      Rng srng = rng.fork("speaker").fork(spk);
      per_speaker[spk] = anonymize_speaker(sys.anonymizer, acc.first / acc.second, sys.strategy, srng,
                                           sys.embedding_steps, sys.pool, spk);
      out.mapping.push_back({spk, per_speaker[spk].w_used, per_speaker[spk].s_anon});
    }
  }

  std::vector<backbone::ReconstructRequest> requests;
  for (const auto& u : ds.utterances) {
    AnonymizedSpeaker a;
    if (sys.strategy.scope == Scope::PerSpeaker) {
      a = per_speaker.at(u.speaker_id);
    } else {
      Rng urng = rng.fork("utterance").fork(u.id);
      try {
        a = anonymize_speaker(sys.anonymizer, source[u.id], sys.strategy, urng, sys.embedding_steps, sys.pool,
                              u.speaker_id);
      } catch (const NumericalDivergence& e) {
        throw NumericalDivergence("utterance " + u.id + ": " + e.what(), e.step());
      }
      out.mapping.push_back({u.speaker_id + "/" + u.id, a.w_used, a.s_anon});
    }
    Rng frng = rng.fork("frames").fork(u.id);
    requests.push_back(backbone::make_request(*sys.backbone, params, u.frame_tokens(), u.p_norm(), a.s_anon, frng));
    out.utterance_targets[u.id] = a.s_anon;
  }
  const auto frames =
      backbone::reconstruct_many(*sys.backbone, requests, flow::IntegrationSpec::forward(sys.frame_steps));
  for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
    world::Utterance v = ds.utterances[i];
    v.frames = frames[i];
    out.dataset.utterances.push_back(std::move(v));
  }
  return out;
}

void save_anonymizer(const std::filesystem::path& path, const AnonymizerModel& model) {
  nn::write_checkpoint(path, model.to_tensors());
}

AnonymizerModel load_anonymizer(const std::filesystem::path& path) {
  return AnonymizerModel::from_tensors(nn::read_checkpoint(path));
}

void save_mapping(const std::filesystem::path& path, const std::vector<MappingRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.key;
    out += '\t';
    out += r.w_used ? format9(*r.w_used) : std::string("NA");
    out += '\t';
    for (Eigen::Index i = 0; i < r.s_anon.size(); ++i) {
      if (i) out += ',';
      out += format9(r.s_anon(i));
    }
    out += '\n';
  }
  write_file(path, out);
}

std::vector<MappingRow> load_mapping(const std::filesystem::path& path) {
  std::vector<MappingRow> rows;
  for (const auto& line : read_lines(path)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    if (cols.size() != 3) throw DataError("mapping: expected three tab-separated columns");
    MappingRow r;
    r.key = cols[0];
    std::vector<double> v;
    try {
      if (cols[1] != "NA") r.w_used = std::stod(cols[1]);
      std::stringstream vs(cols[2]);
      for (std::string x; std::getline(vs, x, ',');) v.push_back(std::stod(x));
    } catch (const std::logic_error&) {
      throw DataError("mapping: malformed number in row " + r.key);
    }
    r.s_anon = Eigen::Map<VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    rows.push_back(std::move(r));
  }
  return rows;
}

std::map<std::string, VectorXd> utterance_targets(const std::vector<MappingRow>& mapping, const world::Dataset& ds) {
  std::map<std::string, const VectorXd*> by_key;
  for (const auto& r : mapping) by_key[r.key] = &r.s_anon;
  std::map<std::string, VectorXd> out;
  for (const auto& u : ds.utterances) {
    auto it = by_key.find(u.speaker_id + "/" + u.id);
    if (it == by_key.end()) it = by_key.find(u.speaker_id);
    if (it == by_key.end()) throw DataError("mapping: no identity for utterance " + u.id);
    out[u.id] = *it->second;
  }
  return out;
}

}  // namespace f3va::anonymizer
