#pragma once

// Frame generator: a conditioned flow-matching field over frames whose local
// inputs are the quantized content features and the normalized pitch, and
// whose global conditioning is the speaker embedding.

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "f3va/backbone/vq.hpp"
#include "f3va/flowmath.hpp"
#include "f3va/nn/checkpoint.hpp"
#include "f3va/nn/conditioned_field.hpp"
#include "f3va/world/world.hpp"

namespace f3va::backbone {

struct BackboneConfig {
  int hidden = 128;
  int cond_hidden = 64;
  int blocks = 3;
  int time_dim = 16;
  int codebook_size = 96;
  double beta = 0.25;
  double lambda = 1.0;
  int steps = 5000;
  int batch = 256;
  double peak_lr = 2e-3;
  double pct_start = 0.1;
  double weight_decay = 0.01;

  void validate() const;
};

BackboneConfig backbone_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BackboneConfig& c);

struct BackboneModel {
  int speaker_dim = 0;
  int frame_dim = 0;
  int content_dim = 0;
  nn::ConditionedField<float> field;
  Codebook<float> codebook;
  double lambda = 1.0;

  nn::ParameterRefs<float> parameters();
  /// [c_vq; p_norm] stacked per column.
  MatrixXf local_inputs(const MatrixXf& c_vq, const VectorXf& p_norm) const;

  std::vector<nn::Tensor> to_tensors() const;
  static BackboneModel from_tensors(const std::vector<nn::Tensor>& tensors);
};

/// Fresh model: random trunk, zero modulation, codebook seeded by k-means++ on `features`.
BackboneModel init_backbone(int speaker_dim, int frame_dim, const MatrixXf& features, const BackboneConfig& config,
                            Rng& rng);

/// Training frames, one column per frame.
struct FrameSet {
  MatrixXf x1;       ///< F x N clean frames
  MatrixXf f_sem;    ///< E x N content features
  VectorXf p_norm;   ///< N
  MatrixXf speaker;  ///< D x N conditioning embedding of the frame's utterance

  Eigen::Index size() const { return x1.cols(); }
  FrameSet gather(const std::vector<Eigen::Index>& idx) const;
};

/// Per-frame semantic features: fixed token embedding plus N(0, feature_noise^2). Returns T x E.
MatrixXd content_features(const std::vector<int>& frame_tokens, const world::WorldParams& params, Rng& rng);

/// Frames of every utterance, conditioned on the oracle-extracted utterance speaker.
FrameSet collect_frames(const world::Dataset& ds, const world::WorldParams& params, Rng& rng);

struct BackboneLoss {
  double total = 0.0;
  double flow = 0.0;
  double commit = 0.0;
};

/// lambda * commit + flow on one batch; accumulates gradients when requested.
BackboneLoss backbone_loss(BackboneModel& model, const FrameSet& batch, const flow::FlowBatch<float>& fb,
                           bool accumulate_gradients = true);

struct LossRecord {
  int step = 0;
  double total = 0.0;
  double flow = 0.0;
  double commit = 0.0;
  double lr = 0.0;
};

struct TrainedBackbone {
  BackboneModel model;
  std::vector<LossRecord> trace;
};

TrainedBackbone train_backbone(const FrameSet& frames, int speaker_dim, const BackboneConfig& config, Rng& rng);

/// ODE-3: integrates the field from x0 ~ N(0, I) per frame. f_sem is T x E; returns T x F.
MatrixXd reconstruct(const BackboneModel& model, const MatrixXd& f_sem, const VectorXd& p_norm, const VectorXd& speaker,
                     const flow::IntegrationSpec& spec, Rng& rng);

/// One utterance worth of ODE-3 inputs with its starting noise (F x T).
struct ReconstructRequest {
  MatrixXd f_sem;  ///< T x E
  VectorXd p_norm;
  VectorXd speaker;
  MatrixXf x0;
};

/// Draws the request's content features and x0 exactly as reconstruct_tokens() does.
ReconstructRequest make_request(const BackboneModel& model, const world::WorldParams& params,
                                const std::vector<int>& frame_tokens, const VectorXd& p_norm, const VectorXd& speaker,
                                Rng& rng);

/// Integrates many requests as one batch; returns T x F frames per request.
std::vector<MatrixXd> reconstruct_many(const BackboneModel& model, const std::vector<ReconstructRequest>& requests,
                                       const flow::IntegrationSpec& spec);

/// reconstruct() with content features drawn from `params` for the given frame tokens.
MatrixXd reconstruct_tokens(const BackboneModel& model, const world::WorldParams& params,
                            const std::vector<int>& frame_tokens, const VectorXd& p_norm, const VectorXd& speaker,
                            const flow::IntegrationSpec& spec, Rng& rng);

void save_backbone(const std::filesystem::path& path, const BackboneModel& model);
BackboneModel load_backbone(const std::filesystem::path& path);

}  // namespace f3va::backbone
