#include "f3va/backbone/backbone.hpp"

#include <cmath>

#include "f3va/errors.hpp"
#include "f3va/nn/optim.hpp"

namespace f3va::backbone {

using nlohmann::json;

void BackboneConfig::validate() const {
  if (hidden < 1 || cond_hidden < 1 || blocks < 1) throw ConfigError("backbone: layer sizes must be positive");
  if (time_dim < 2 || time_dim % 2) throw ConfigError("backbone: time_dim must be even and >= 2");
  if (codebook_size < 2) throw ConfigError("backbone: codebook size K must be at least 2");
  if (beta < 0.0 || lambda < 0.0) throw ConfigError("backbone: beta and lambda must be >= 0");
  if (steps < 1 || batch < 1) throw ConfigError("backbone: steps and batch must be positive");
  if (!(peak_lr >= 0.0) || !(pct_start > 0.0 && pct_start < 1.0)) throw ConfigError("backbone: bad learning-rate schedule");
}

BackboneConfig backbone_config_from_json(const json& j) {
  BackboneConfig c;
  const auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  if (j.contains("dims")) {
    const auto& d = j.at("dims");
    if (d.contains("hidden")) c.hidden = d.at("hidden").get<int>();
    if (d.contains("cond_hidden")) c.cond_hidden = d.at("cond_hidden").get<int>();
    if (d.contains("blocks")) c.blocks = d.at("blocks").get<int>();
    if (d.contains("time_dim")) c.time_dim = d.at("time_dim").get<int>();
  }
  get("K", c.codebook_size);
  get("beta", c.beta);
  get("lambda", c.lambda);
  get("steps", c.steps);
  get("batch", c.batch);
  get("peak_lr", c.peak_lr);
  get("pct_start", c.pct_start);
  get("weight_decay", c.weight_decay);
  c.validate();
  return c;
}

json to_json(const BackboneConfig& c) {
  return {{"dims", {{"hidden", c.hidden}, {"cond_hidden", c.cond_hidden}, {"blocks", c.blocks}, {"time_dim", c.time_dim}}},
          {"K", c.codebook_size},
          {"beta", c.beta},
          {"lambda", c.lambda},
          {"steps", c.steps},
          {"batch", c.batch},
          {"peak_lr", c.peak_lr},
          {"pct_start", c.pct_start},
          {"weight_decay", c.weight_decay}};
}

nn::ParameterRefs<float> BackboneModel::parameters() {
  auto refs = field.parameters();
  refs.push_back(&codebook.codewords);
  return refs;
}

MatrixXf BackboneModel::local_inputs(const MatrixXf& c_vq, const VectorXf& p_norm) const {
  MatrixXf local(c_vq.rows() + 1, c_vq.cols());
  local.topRows(c_vq.rows()) = c_vq;
  local.row(c_vq.rows()) = p_norm.transpose();
  return local;
}

std::vector<nn::Tensor> BackboneModel::to_tensors() const {
  const auto& c = field.config();
  std::vector<nn::Tensor> out;
  out.push_back(nn::int_tensor("backbone/config/dims", {speaker_dim, frame_dim, content_dim, c.hidden, c.cond_hidden,
                                                        c.blocks, c.time_dim, codebook.size()}));
  MatrixXd weights(1, 2);
  weights << lambda, codebook.beta;
  out.push_back(nn::to_tensor("backbone/config/lambda_beta", weights));
  auto& self = const_cast<BackboneModel&>(*this);
  nn::append_parameters(out, "backbone/field/", self.field.parameters());
  out.push_back(nn::to_tensor("backbone/codebook", codebook.codewords.value));
  return out;
}

BackboneModel BackboneModel::from_tensors(const std::vector<nn::Tensor>& tensors) {
  const auto dims = nn::tensor_ints(nn::find_tensor(tensors, "backbone/config/dims"));
  if (dims.size() != 8) throw DataError("backbone checkpoint: malformed config/dims");
  const MatrixXd weights = nn::from_tensor<double>(nn::find_tensor(tensors, "backbone/config/lambda_beta"));
  BackboneModel m;
  m.speaker_dim = dims[0];
  m.frame_dim = dims[1];
  m.content_dim = dims[2];
  nn::ConditionedConfig fc{dims[1], dims[2] + 1, dims[0], dims[3], dims[4], dims[5], dims[6]};
  Rng unused(0);
  m.field = nn::ConditionedField<float>(fc, unused);
  nn::load_parameters(tensors, "backbone/field/", m.field.parameters());
  MatrixXf words = nn::from_tensor<float>(nn::find_tensor(tensors, "backbone/codebook"));
  if (words.rows() != dims[2] || words.cols() != dims[7]) throw DataError("backbone checkpoint: codebook shape mismatch");
  m.codebook = Codebook<float>(std::move(words), weights(0, 1));
  m.lambda = weights(0, 0);
  return m;
}

BackboneModel init_backbone(int speaker_dim, int frame_dim, const MatrixXf& features, const BackboneConfig& config,
                            Rng& rng) {
  config.validate();
  BackboneModel m;
  m.speaker_dim = speaker_dim;
  m.frame_dim = frame_dim;
  m.content_dim = static_cast<int>(features.rows());
  m.lambda = config.lambda;
  nn::ConditionedConfig fc{frame_dim,     m.content_dim + 1, speaker_dim,    config.hidden,
                           config.cond_hidden, config.blocks, config.time_dim};
  Rng field_rng = rng.fork("field");
  m.field = nn::ConditionedField<float>(fc, field_rng);
  Rng vq_rng = rng.fork("codebook");
  m.codebook = Codebook<float>(kmeans_pp_init<float>(features, config.codebook_size, vq_rng), config.beta);
  return m;
}

FrameSet FrameSet::gather(const std::vector<Eigen::Index>& idx) const {
  FrameSet b;
  const auto n = static_cast<Eigen::Index>(idx.size());
  b.x1.resize(x1.rows(), n);
  b.f_sem.resize(f_sem.rows(), n);
  b.p_norm.resize(n);
  b.speaker.resize(speaker.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto i = idx[static_cast<std::size_t>(j)];
    b.x1.col(j) = x1.col(i);
    b.f_sem.col(j) = f_sem.col(i);
    b.p_norm(j) = p_norm(i);
    b.speaker.col(j) = speaker.col(i);
  }
  return b;
}

MatrixXd content_features(const std::vector<int>& frame_tokens, const world::WorldParams& params, Rng& rng) {
  MatrixXd f(static_cast<Eigen::Index>(frame_tokens.size()), params.E());
  for (std::size_t t = 0; t < frame_tokens.size(); ++t) {
    const int tok = frame_tokens[t];
    if (tok < 0 || tok >= params.V()) throw RejectedInput("content_features: token out of range");
    for (Eigen::Index e = 0; e < params.E(); ++e)
      f(static_cast<Eigen::Index>(t), e) = params.token_embedding(e, tok) + params.config.feature_noise * rng.normal();
  }
  return f;
}

FrameSet collect_frames(const world::Dataset& ds, const world::WorldParams& params, Rng& rng) {
  Eigen::Index total = 0;
  for (const auto& u : ds.utterances) total += u.num_frames();
  FrameSet fs;
  fs.x1.resize(params.F(), total);
  fs.f_sem.resize(params.E(), total);
  fs.p_norm.resize(total);
  fs.speaker.resize(params.D(), total);
  Eigen::Index col = 0;
  for (const auto& u : ds.utterances) {
    const auto tokens = u.frame_tokens();
    const VectorXd p = u.p_norm();
    const VectorXd s = world::oracle_extract_speaker(u.frames, tokens, p, params);
    Rng urng = rng.fork(u.id);
    const MatrixXd f = content_features(tokens, params, urng);
    const auto T = u.num_frames();
    fs.x1.middleCols(col, T) = u.frames.transpose().cast<float>();
    fs.f_sem.middleCols(col, T) = f.transpose().cast<float>();
    fs.p_norm.segment(col, T) = p.cast<float>();
    fs.speaker.middleCols(col, T) = s.cast<float>().replicate(1, T);
    col += T;
  }
  return fs;
}

BackboneLoss backbone_loss(BackboneModel& model, const FrameSet& batch, const flow::FlowBatch<float>& fb,
                           bool accumulate_gradients) {
  const Quantized<float> q = quantize(batch.f_sem, model.codebook);
  const MatrixXf local = model.local_inputs(q.c_vq, batch.p_norm);
  MatrixXf pred = model.field.forward(fb.xt, local, batch.speaker, fb.t);
  const MatrixXf diff = pred - fb.u_target;
  const double denom = static_cast<double>(diff.size());
  BackboneLoss loss;
  loss.flow = diff.cast<double>().squaredNorm() / denom;
  loss.commit = q.commit_loss;
  loss.total = model.lambda * loss.commit + loss.flow;
  if (accumulate_gradients) {
    const auto g = model.field.backward(MatrixXf((2.0f / static_cast<float>(denom)) * diff));
    const MatrixXf d_cvq = g.local.topRows(model.content_dim);
    quantize_backward(batch.f_sem, q, d_cvq, model.lambda, model.codebook);
  }
  return loss;
}

TrainedBackbone train_backbone(const FrameSet& frames, int speaker_dim, const BackboneConfig& config, Rng& rng) {
  config.validate();
  if (frames.size() == 0) throw RejectedInput("train_backbone: no training frames");
  TrainedBackbone out;
  Rng init_rng = rng.fork("init");
  out.model = init_backbone(speaker_dim, static_cast<int>(frames.x1.rows()), frames.f_sem, config, init_rng);
  nn::AdamWConfig oc;
  oc.weight_decay = config.weight_decay;
  oc.total_steps = static_cast<std::size_t>(config.steps);
  oc.schedule = nn::OneCycle{config.peak_lr, config.pct_start};
  nn::AdamW<float> opt(oc);
  auto params = out.model.parameters();
  Rng train_rng = rng.fork("train");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(config.batch));
  for (int step = 0; step < config.steps; ++step) {
    for (auto& i : idx) i = static_cast<Eigen::Index>(train_rng.index(static_cast<std::size_t>(frames.size())));
    const FrameSet batch = frames.gather(idx);
    const auto fb = flow::draw_flow_batch<float>(batch.x1, train_rng);
    nn::zero_grad(params);
    const BackboneLoss loss = backbone_loss(out.model, batch, fb);
    if (!std::isfinite(loss.total))
      throw NumericalDivergence("train_backbone: non-finite loss", static_cast<std::size_t>(step));
    const double lr = opt.current_lr();
    opt.step(params);
    out.trace.push_back({step, loss.total, loss.flow, loss.commit, lr});
  }
  return out;
}

ReconstructRequest make_request(const BackboneModel& model, const world::WorldParams& params,
                                const std::vector<int>& frame_tokens, const VectorXd& p_norm, const VectorXd& speaker,
                                Rng& rng) {
  Rng feature_rng = rng.fork("features");
  ReconstructRequest r{content_features(frame_tokens, params, feature_rng), p_norm, speaker, {}};
  r.x0 = rng.normal_matrix<float>(model.frame_dim, static_cast<Eigen::Index>(frame_tokens.size()));
  return r;
}

std::vector<MatrixXd> reconstruct_many(const BackboneModel& model, const std::vector<ReconstructRequest>& requests,
                                       const flow::IntegrationSpec& spec) {
  Eigen::Index total = 0;
  for (const auto& r : requests) {
    const auto T = r.f_sem.rows();
    if (r.f_sem.cols() != model.content_dim || r.p_norm.size() != T || r.speaker.size() != model.speaker_dim ||
        r.x0.rows() != model.frame_dim || r.x0.cols() != T)
      throw RejectedInput("reconstruct: dimension mismatch");
    total += T;
  }
  std::vector<MatrixXd> out;
  if (total == 0) {
    for (std::size_t i = 0; i < requests.size(); ++i) out.emplace_back(0, model.frame_dim);
    return out;
  }
  MatrixXf f(model.content_dim, total), global(model.speaker_dim, total), x0(model.frame_dim, total);
  VectorXf p(total);
  Eigen::Index col = 0;
  for (const auto& r : requests) {
    const auto T = r.f_sem.rows();
    f.middleCols(col, T) = r.f_sem.transpose().cast<float>();
    p.segment(col, T) = r.p_norm.cast<float>();
    global.middleCols(col, T) = r.speaker.cast<float>().replicate(1, T);
    x0.middleCols(col, T) = r.x0;
    col += T;
  }
  const Quantized<float> q = quantize(f, model.codebook);
  const MatrixXf local = model.local_inputs(q.c_vq, p);
  const auto field = [&](const MatrixXf& x, float t) {
    return model.field.evaluate(x, local, global, VectorXf::Constant(total, t));
  };
  const MatrixXf x1 = flow::integrate<float>(field, x0, spec);
  col = 0;
  for (const auto& r : requests) {
    const auto T = r.f_sem.rows();
    out.push_back(x1.middleCols(col, T).transpose().cast<double>());
    col += T;
  }
  return out;
}

MatrixXd reconstruct(const BackboneModel& model, const MatrixXd& f_sem, const VectorXd& p_norm, const VectorXd& speaker,
                     const flow::IntegrationSpec& spec, Rng& rng) {
  if (f_sem.cols() != model.content_dim || p_norm.size() != f_sem.rows() || speaker.size() != model.speaker_dim)
    throw RejectedInput("reconstruct: dimension mismatch");
  ReconstructRequest r{f_sem, p_norm, speaker, rng.normal_matrix<float>(model.frame_dim, f_sem.rows())};
  return reconstruct_many(model, {r}, spec).front();
}

MatrixXd reconstruct_tokens(const BackboneModel& model, const world::WorldParams& params,
                            const std::vector<int>& frame_tokens, const VectorXd& p_norm, const VectorXd& speaker,
                            const flow::IntegrationSpec& spec, Rng& rng) {
  return reconstruct_many(model, {make_request(model, params, frame_tokens, p_norm, speaker, rng)}, spec).front();
}

void save_backbone(const std::filesystem::path& path, const BackboneModel& model) {
  nn::write_checkpoint(path, model.to_tensors());
}

BackboneModel load_backbone(const std::filesystem::path& path) {
  return BackboneModel::from_tensors(nn::read_checkpoint(path));
}

}  // namespace f3va::backbone
