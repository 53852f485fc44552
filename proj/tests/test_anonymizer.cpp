#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "f3va/anonymizer/anonymizer.hpp"
#include "f3va/textio.hpp"
#include "support/anonymizer_checks.hpp"
#include "support/tiny_world.hpp"

using namespace f3va;
using anonymizer::Scope;
using anonymizer::WeightStrategy;

namespace {

anonymizer::AnonymizerConfig quick_config(int steps) {
  anonymizer::AnonymizerConfig c;
  c.steps = steps;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("f3va_test_anonymizer_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("obscure endpoints are exact") {
  Rng rng(1);
  const VectorXd zo = rng.normal_matrix(16, 1).col(0), zr = rng.normal_matrix(16, 1).col(0);
  CHECK(anonymizer::obscure(zo, zr, 1.0) == zo);
  CHECK(anonymizer::obscure(zo, zr, 0.0) == zr);
  // Equal inputs at w = 0.5 are scaled by 1 / sqrt(0.5).
  CHECK((anonymizer::obscure(zo, zo, 0.5) - zo * std::sqrt(2.0)).norm() < 1e-12);
  const VectorXd neg = anonymizer::obscure(zo, zr, -1.0);
  CHECK((neg - (2.0 * zr - zo) / std::sqrt(5.0)).norm() < 1e-12);
  CHECK_THROWS_AS(anonymizer::obscure(zo, zr, 1.01), RejectedInput);
  CHECK_THROWS_AS(anonymizer::obscure(zo, zr, -1.5), RejectedInput);
  CHECK_THROWS_AS(anonymizer::obscure(zo, VectorXd::Zero(3), 0.5), RejectedInput);
}

TEST_CASE("obscure preserves unit variance") {
  Rng rng(2);
  for (double w : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    const auto [lo, hi] = testing::obscure_variance_range(w, 100000, 16, rng);
    INFO("w = " << w);
    CHECK(lo >= 0.98);
    CHECK(hi <= 1.02);
  }
}

TEST_CASE("a zero field makes every ODE the identity") {
  const auto m = anonymizer::zero_anonymizer(nn::UShapedConfig{});
  Rng rng(3);
  const MatrixXd s = rng.normal_matrix(16, 4);
  CHECK(anonymizer::encode(m, s) == s);
  CHECK(anonymizer::generate(m, s) == s);
  CHECK_THROWS_AS(anonymizer::encode(m, s, flow::IntegrationSpec::forward()), RejectedInput);
  CHECK_THROWS_AS(anonymizer::generate(m, s, flow::IntegrationSpec::backward()), RejectedInput);
}

TEST_CASE("weight strategies parse and validate") {
  const auto f = WeightStrategy::parse("fixed:-0.5", Scope::PerUtterance);
  CHECK(f.kind == WeightStrategy::Kind::Fixed);
  CHECK(f.w == -0.5);
  CHECK(f.scope == Scope::PerUtterance);
  const auto r = WeightStrategy::parse("range:-1:0");
  CHECK(r.kind == WeightStrategy::Kind::UniformRange);
  CHECK(r.a == -1.0);
  CHECK(r.b == 0.0);
  CHECK(WeightStrategy::parse("pool").kind == WeightStrategy::Kind::PoolSelect);
  CHECK(WeightStrategy::parse(f.to_string()).w == f.w);
  for (const char* bad : {"fixed:2", "fixed:x", "range:0:0", "range:0.5:-0.5", "range:-2:0", "pool:1", "mix", ""})
    CHECK_THROWS_AS(WeightStrategy::parse(bad), ConfigError);
  CHECK(anonymizer::parse_scope("per_speaker") == Scope::PerSpeaker);
  CHECK_THROWS_AS(anonymizer::parse_scope("global"), ConfigError);
}

TEST_CASE("anonymize_speaker strategies") {
  const auto m = anonymizer::zero_anonymizer(nn::UShapedConfig{});
  Rng rng(4);
  const VectorXd s = rng.normal_matrix(16, 1).col(0);

  const auto same = anonymizer::anonymize_speaker(&m, s, WeightStrategy::fixed(1.0), rng, 16);
  CHECK(same.s_anon == s);
  CHECK(same.w_used == 1.0);

  for (int k = 0; k < 20; ++k) {
    const auto r = anonymizer::anonymize_speaker(&m, s, WeightStrategy::range(-0.5, 0.25), rng, 16);
    REQUIRE(r.w_used);
    CHECK(*r.w_used >= -0.5);
    CHECK(*r.w_used <= 0.25);
  }

  const auto a = anonymizer::anonymize_speaker(&m, s, WeightStrategy::fixed(0.0), rng, 16);
  const auto b = anonymizer::anonymize_speaker(&m, s, WeightStrategy::fixed(0.0), rng, 16);
  CHECK(a.s_anon != b.s_anon);

  anonymizer::EmbeddingPool one{{"other"}, {VectorXd::Ones(16)}};
  const auto p = anonymizer::anonymize_speaker(nullptr, s, WeightStrategy::pool(), rng, 16, &one, "me");
  CHECK(p.s_anon == VectorXd::Ones(16));
  CHECK(!p.w_used);

  anonymizer::EmbeddingPool self{{"me"}, {VectorXd::Ones(16)}};
  CHECK_THROWS_AS(anonymizer::anonymize_speaker(nullptr, s, WeightStrategy::pool(), rng, 16, &self, "me"),
                  RejectedInput);
  anonymizer::EmbeddingPool empty;
  CHECK_THROWS_AS(anonymizer::anonymize_speaker(nullptr, s, WeightStrategy::pool(), rng, 16, &empty, "me"),
                  RejectedInput);
  CHECK_THROWS_AS(anonymizer::anonymize_speaker(nullptr, s, WeightStrategy::fixed(0.0), rng, 16), RejectedInput);
}

TEST_CASE("training on a single repeated point collapses generation onto it") {
  Rng rng(5);
  const VectorXd p = rng.normal_matrix(16, 1).col(0).normalized();
  const MatrixXd data = p.replicate(1, 64);
  Rng train(6);
  CHECK_THROWS_AS(anonymizer::train_anonymizer(data, quick_config(10), train), RejectedInput);
  // Two distinct but nearly identical embeddings.
  MatrixXd two = data;
  two.col(0) += VectorXd::Constant(16, 1e-6);
  auto config = quick_config(8000);
  config.field.hidden = 256;
  const auto t = anonymizer::train_anonymizer(two, config, train);
  const MatrixXd out = anonymizer::generate(t.model, rng.normal_matrix(16, 200));
  double worst = 0.0;
  for (Eigen::Index i = 0; i < out.cols(); ++i) worst = std::max(worst, (out.col(i) - p).norm());
  CHECK(worst < 0.15);
  CHECK(t.loss_trace.back() < t.loss_trace.front());
}

TEST_CASE("anonymizer training is bit-reproducible and checkpoints round trip") {
  Rng data_rng(7);
  const MatrixXd data = data_rng.normal_matrix(16, 200);
  Rng a(8), b(8);
  const auto ta = anonymizer::train_anonymizer(data, quick_config(50), a);
  const auto tb = anonymizer::train_anonymizer(data, quick_config(50), b);
  CHECK(nn::encode_checkpoint(ta.model.to_tensors()) == nn::encode_checkpoint(tb.model.to_tensors()));
  const auto dir = scratch("ckpt");
  anonymizer::save_anonymizer(dir / "a.ckpt", ta.model);
  const auto loaded = anonymizer::load_anonymizer(dir / "a.ckpt");
  CHECK(loaded.seed == ta.model.seed);
  CHECK(loaded.data_hash == ta.model.data_hash);
  CHECK(loaded.trained_steps == 50);
  const MatrixXd z = data_rng.normal_matrix(16, 3);
  CHECK(anonymizer::generate(loaded, z) == anonymizer::generate(ta.model, z));
  CHECK_THROWS_AS(anonymizer::train_anonymizer(MatrixXd::Zero(16, 0), quick_config(10), a), RejectedInput);
  CHECK_THROWS_AS(anonymizer::train_anonymizer(data.topRows(8), quick_config(10), a), RejectedInput);
}

TEST_CASE("generated samples cover every mixture component") {
  const auto cov = testing::mixture_coverage(quick_config(3000), 8, 16, 500, 2000, 5);
  for (double share : cov.shares) {
    CHECK(share >= 0.125 - 0.05);
    CHECK(share <= 0.125 + 0.05);
  }
}

TEST_CASE("dataset anonymization preserves content and honours the scope") {
  const auto w = testing::tiny_world(3, 4, 3);
  const auto bb = testing::tiny_backbone(w);
  const auto m = anonymizer::zero_anonymizer(nn::UShapedConfig{});
  anonymizer::AnonymizationSystem sys;
  sys.backbone = &bb;
  sys.anonymizer = &m;
  sys.world = &w.params;
  sys.embedding_steps = 4;
  sys.frame_steps = 4;

  sys.strategy = WeightStrategy::fixed(0.0, Scope::PerSpeaker);
  Rng rng(1);
  const auto out = anonymizer::anonymize_dataset(sys, w.ds, rng);
  REQUIRE(out.dataset.utterances.size() == w.ds.utterances.size());
  CHECK(out.mapping.size() == w.ds.speakers.size());
  for (std::size_t i = 0; i < w.ds.utterances.size(); ++i) {
    const auto &a = w.ds.utterances[i], &b = out.dataset.utterances[i];
    CHECK(a.tokens == b.tokens);
    CHECK(a.f0_hz == b.f0_hz);
    CHECK(a.token_frames == b.token_frames);
    CHECK(a.duration_s == b.duration_s);
    CHECK(b.frames.rows() == a.frames.rows());
    CHECK(b.frames != a.frames);
  }
  for (const auto& [spk, idx] : w.ds.utterances_by_speaker())
    for (auto i : idx) CHECK(out.utterance_targets.at(w.ds.utterances[i].id) == out.utterance_targets.at(w.ds.utterances[idx[0]].id));

  sys.strategy = WeightStrategy::fixed(0.0, Scope::PerUtterance);
  Rng rng2(1);
  const auto per_utt = anonymizer::anonymize_dataset(sys, w.ds, rng2);
  CHECK(per_utt.mapping.size() == w.ds.utterances.size());
  CHECK(per_utt.mapping[0].key == w.ds.utterances[0].speaker_id + "/" + w.ds.utterances[0].id);
  std::set<std::vector<double>> distinct;
  for (const auto& [id, s] : per_utt.utterance_targets) distinct.insert({s.data(), s.data() + s.size()});
  CHECK(distinct.size() == w.ds.utterances.size());

  Rng rng3(1);
  const auto again = anonymizer::anonymize_dataset(sys, w.ds, rng3);
  CHECK(again.dataset.utterances[2].frames == per_utt.dataset.utterances[2].frames);

  Rng rng4(2);
  const auto empty = anonymizer::anonymize_dataset(sys, world::Dataset{}, rng4);
  CHECK(empty.dataset.utterances.empty());
  CHECK(empty.mapping.empty());
}

TEST_CASE("mapping files round trip and resolve utterance identities") {
  const auto w = testing::tiny_world(3, 2, 2);
  std::vector<anonymizer::MappingRow> rows;
  rows.push_back({w.ds.speakers[0].id, 0.25, VectorXd::Constant(3, 0.5)});
  rows.push_back({w.ds.speakers[1].id, std::nullopt, VectorXd::Constant(3, -1.0)});
  const auto dir = scratch("mapping");
  anonymizer::save_mapping(dir / "m.tsv", rows);
  const auto lines = read_lines(dir / "m.tsv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[1].find("\tNA\t") != std::string::npos);
  const auto back = anonymizer::load_mapping(dir / "m.tsv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].w_used == 0.25);
  CHECK(!back[1].w_used);
  CHECK(back[1].s_anon == rows[1].s_anon);
  const auto targets = anonymizer::utterance_targets(back, w.ds);
  CHECK(targets.size() == w.ds.utterances.size());
  CHECK(targets.at(w.ds.utterances.back().id) == rows[1].s_anon);

  write_file(dir / "bad.tsv", "spk\t0.1\n");
  CHECK_THROWS_AS(anonymizer::load_mapping(dir / "bad.tsv"), DataError);
  write_file(dir / "bad2.tsv", "spk\tzz\t1,2\n");
  CHECK_THROWS_AS(anonymizer::load_mapping(dir / "bad2.tsv"), DataError);
  CHECK_THROWS_AS(anonymizer::utterance_targets({}, w.ds), DataError);
}
