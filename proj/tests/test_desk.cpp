#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "f3va/backbone/pitch.hpp"
#include "f3va/seca/seca.hpp"
#include "support/desk_fixture.hpp"

using namespace f3va;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const testing::DeskRun& desk() {
  static const testing::DeskRun run(F3VA_DESK_RUN);
  return run;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string part;
  while (std::getline(ss, part, sep)) out.push_back(part);
  return out;
}

double token_error(const std::vector<int>& ref, const std::vector<int>& hyp) {
  std::size_t e = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) e += ref[i] != hyp[i];
  return static_cast<double>(e) / static_cast<double>(ref.size());
}

/// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST_CASE("every stage wrote its artifacts and a consistent manifest") {
  for (const auto* stage : {"world", "backbone", "anonymizer", "anonymized", "seca", "trials_acoustic",
                            "trials_content", "eval_acoustic_ignorant", "eval_acoustic_lazy", "eval_content_ignorant",
                            "report"}) {
    INFO(stage);
    const auto dir = desk().dir / stage;
    REQUIRE(fs::exists(dir / "manifest.json"));
    const auto m = json::parse(read_file(dir / "manifest.json"));
    CHECK(!m["outputs"].empty());
    for (const auto& [name, hash] : m["outputs"].items()) {
      INFO(name);
      REQUIRE(fs::exists(dir / name));
      CHECK(file_hash(dir / name) == hash.get<std::string>());
    }
    for (const auto& [name, entry] : m["inputs"].items()) CHECK(entry["hash"] != "missing");
  }
}

TEST_CASE("output files follow their formats") {
  const auto& d = desk().dir;
  for (const auto* mode : {"acoustic", "content"}) {
    const auto lines = read_lines(d / (std::string("trials_") + mode) / (std::string("trials_") + mode + ".tsv"));
    REQUIRE(!lines.empty());
    for (const auto& l : lines) {
      const auto f = split(l, '\t');
      REQUIRE(f.size() == 3);
      CHECK((f[2] == "0" || f[2] == "1"));
    }
  }
  for (const auto* stage : {"eval_acoustic_ignorant", "eval_acoustic_lazy", "eval_content_ignorant"}) {
    const auto rep = json::parse(read_file(d / stage / "report.json"));
    const auto scores = read_lines(d / stage / "scores.tsv");
    CHECK(scores.size() == rep["n_trials"].get<std::size_t>());
    CHECK(rep["n_target"].get<std::size_t>() + rep["n_nontarget"].get<std::size_t>() == scores.size());
    for (const auto& l : scores) {
      const auto f = split(l, '\t');
      REQUIRE(f.size() == 4);
      const double s = std::stod(f[3]);
      CHECK(s >= -1.0 - 1e-9);
      CHECK(s <= 1.0 + 1e-9);
    }
  }
  const auto radar = read_lines(d / "report" / "radar.csv");
  REQUIRE(radar.size() >= 2);
  CHECK(radar[0] == "metric,raw,normalized");
  for (std::size_t i = 1; i < radar.size(); ++i) {
    const auto f = split(radar[i], ',');
    REQUIRE(f.size() == 3);
    CHECK(std::stod(f[2]) >= 0.0);
    CHECK(std::stod(f[2]) <= 1.0);
  }
  for (const auto& l : read_lines(d / "anonymized" / "mapping.tsv")) {
    const auto f = split(l, '\t');
    REQUIRE(f.size() == 3);
    CHECK(split(f[2], ',').size() == static_cast<std::size_t>(desk().params().D()));
  }
  for (const auto& l : read_lines(d / "seca" / "edit_reports.jsonl")) {
    const auto r = json::parse(l);
    CHECK(r["spans"].size() == r["replacements"].size());
    CHECK((r["status"] == "unchanged" || r["status"] == "edited" || r["status"] == "partial"));
  }
}

TEST_CASE("backbone training curve and codebook usage") {
  std::vector<double> flow, commit;
  const auto lines = read_lines(desk().dir / "backbone" / "loss_trace.tsv");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i], '\t');
    flow.push_back(std::stod(f[2]));
    commit.push_back(std::stod(f[3]));
  }
  REQUIRE(flow.size() > 200);
  const auto mean = [](const std::vector<double>& v, std::size_t from, std::size_t n) {
    double s = 0.0;
    for (std::size_t k = from; k < from + n; ++k) s += v[k];
    return s / static_cast<double>(n);
  };
  CHECK(mean(flow, flow.size() - 50, 50) < 0.3 * mean(flow, 75, 50));
  CHECK(mean(commit, commit.size() - 50, 50) < mean(commit, 0, 50));

  Rng rng(1);
  const auto fs = backbone::collect_frames(desk().bundle.train, desk().params(), rng);
  const auto& words = desk().backbone.codebook.codewords.value;
  std::vector<int> idx;
  for (Eigen::Index j = 0; j < fs.f_sem.cols(); ++j)
    idx.push_back(backbone::nearest_codeword<float>(fs.f_sem.col(j), words));
  const auto usage = backbone::codeword_usage(idx, static_cast<int>(words.cols()));
  const auto dead = std::count_if(usage.begin(), usage.end(), [](double u) { return u < 1e-3; });
  CHECK(static_cast<double>(dead) < 0.5 * static_cast<double>(usage.size()));
}

TEST_CASE("backbone reconstruction keeps identity and content") {
  const auto& p = desk().params();
  const auto ds = desk().eval_subset(3);
  double worst_cos = 1.0, ter = 0.0;
  for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
    const auto& u = ds.utterances[i];
    const VectorXd s = world::oracle_extract_speaker(u, p);
    Rng rng(100 + i);
    const MatrixXd x = backbone::reconstruct_tokens(desk().backbone, p, u.frame_tokens(), u.p_norm(), s,
                                                    flow::IntegrationSpec::forward(), rng);
    worst_cos = std::min(worst_cos, cosine(world::oracle_extract_speaker(x, u.frame_tokens(), u.p_norm(), p), s));
    ter += token_error(u.frame_tokens(), world::oracle_recover_tokens(x, u.p_norm(), s, p));
  }
  ter /= static_cast<double>(ds.utterances.size());
  CHECK(worst_cos >= 0.8);
  CHECK(ter <= 0.05);
}

TEST_CASE("factorization routes identity through the speaker embedding") {
  const auto& p = desk().params();
  const auto& u = desk().bundle.eval.utterances.front();
  const auto spk = desk().speaker_embeddings();
  Rng rng(7);
  for (int k = 0; k < 10; ++k) {
    const VectorXd a = world::sample_speaker_embedding(p, world::Gender::Male, rng);
    const VectorXd b = world::sample_speaker_embedding(p, world::Gender::Female, rng);
    Rng ra(k), rb(k);
    const MatrixXd xa = backbone::reconstruct_tokens(desk().backbone, p, u.frame_tokens(), u.p_norm(), a,
                                                     flow::IntegrationSpec::forward(), ra);
    const MatrixXd xb = backbone::reconstruct_tokens(desk().backbone, p, u.frame_tokens(), u.p_norm(), b,
                                                     flow::IntegrationSpec::forward(), rb);
    CHECK(cosine(world::oracle_extract_speaker(xa, u.frame_tokens(), u.p_norm(), p), a) >= 0.8);
    CHECK(cosine(world::oracle_extract_speaker(xb, u.frame_tokens(), u.p_norm(), p), b) >= 0.8);
  }
}

TEST_CASE("encoding Gaussianizes real embeddings") {
  const auto& p = desk().params();
  Rng rng(3);
  const int n = 10000;
  MatrixXd s(p.D(), n);
  for (int j = 0; j < n; ++j)
    s.col(j) = world::sample_speaker_embedding(p, j % 2 ? world::Gender::Female : world::Gender::Male, rng);
  const MatrixXd z = anonymizer::encode(desk().anonymizer, s);
  const VectorXd mean = z.rowwise().mean();
  const VectorXd var = (z.colwise() - mean).rowwise().squaredNorm() / static_cast<double>(n - 1);
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    INFO("dimension " << i);
    CHECK(std::abs(mean(i)) <= 0.1);
    CHECK(var(i) >= 0.7);
    CHECK(var(i) <= 1.3);
  }
}

TEST_CASE("generated identities are distributed like real ones") {
  const auto& p = desk().params();
  const auto& utts = desk().bundle.train.utterances;
  const MatrixXd real = cli::training_embeddings(desk().bundle.train, p);
  Rng rng(4);
  const auto pairs = static_cast<int>(real.cols() / 2);
  const MatrixXd gen = anonymizer::generate(desk().anonymizer, rng.normal_matrix(p.D(), 2 * pairs));
  std::vector<double> g, r;
  for (int k = 0; k < pairs; ++k) {
    g.push_back(cosine(gen.col(2 * k), gen.col(2 * k + 1)));
    std::size_t a = 0, b = 0;
    while (utts[a].speaker_id == utts[b].speaker_id) {
      a = rng.index(utts.size());
      b = rng.index(utts.size());
    }
    r.push_back(cosine(real.col(static_cast<Eigen::Index>(a)), real.col(static_cast<Eigen::Index>(b))));
  }
  // Critical value of the two-sample test at the 1% level.
  const double critical = 1.63 * std::sqrt(2.0 / pairs);
  CHECK(ks_statistic(g, r) < critical);
}

TEST_CASE("identity weight keeps and zero weight removes the speaker") {
  const auto ds = desk().eval_subset(2);
  const auto& p = desk().params();
  Rng r1(5);
  const auto kept = anonymizer::anonymize_dataset(
      desk().system(anonymizer::WeightStrategy::fixed(1.0, anonymizer::Scope::PerUtterance)), ds, r1);
  for (std::size_t i = 0; i < ds.utterances.size(); ++i)
    CHECK(cosine(world::oracle_extract_speaker(kept.dataset.utterances[i], p),
                          world::oracle_extract_speaker(ds.utterances[i], p)) >= 0.8);

  // Null distribution of |cosine| between embeddings of different real speakers.
  Rng nrng(6);
  std::vector<double> null;
  for (int k = 0; k < 2000; ++k) {
    const auto& a = desk().pool.embeddings[nrng.index(desk().pool.embeddings.size())];
    const auto& b = desk().pool.embeddings[nrng.index(desk().pool.embeddings.size())];
    null.push_back(std::abs(cosine(a, b)));
  }
  std::sort(null.begin(), null.end());
  const double p95 = null[static_cast<std::size_t>(0.95 * null.size())];

  const auto spk = desk().speaker_embeddings();
  Rng ra(7), rb(8);
  std::size_t above = 0, total = 0;
  for (const auto& [id, s] : spk) {
    const auto a = anonymizer::anonymize_speaker(&desk().anonymizer, s, anonymizer::WeightStrategy::fixed(0.0), ra, 16);
    const auto b = anonymizer::anonymize_speaker(&desk().anonymizer, s, anonymizer::WeightStrategy::fixed(0.0), rb, 16);
    CHECK((a.s_anon - b.s_anon).norm() > 1e-3);
    above += std::abs(cosine(a.s_anon, s)) > p95;
    above += std::abs(cosine(b.s_anon, s)) > p95;
    total += 2;
  }
  CHECK(static_cast<double>(above) <= 0.2 * static_cast<double>(total));
}

TEST_CASE("speaker weight acts monotonically and continuously") {
  const auto spk = desk().speaker_embeddings();
  const std::vector<double> grid{-1.0, -0.5, 0.0, 0.5, 1.0};
  std::vector<double> mean_cos;
  for (double w : grid) {
    double sum = 0.0;
    Rng rng(9);
    for (const auto& [id, s] : spk)
      sum += cosine(
          anonymizer::anonymize_speaker(&desk().anonymizer, s, anonymizer::WeightStrategy::fixed(w), rng, 16).s_anon, s);
    mean_cos.push_back(sum / static_cast<double>(spk.size()));
  }
  for (std::size_t k = 1; k < grid.size(); ++k) CHECK(mean_cos[k] >= mean_cos[k - 1]);

  // Same noise along a fine w-grid: no step is far larger than its neighbours.
  const VectorXd& s = spk.begin()->second;
  std::vector<VectorXd> path;
  for (int k = 0; k <= 40; ++k) {
    Rng rng(10);
    path.push_back(anonymizer::anonymize_speaker(&desk().anonymizer, s,
                                                 anonymizer::WeightStrategy::fixed(-1.0 + k * 0.05), rng, 16)
                       .s_anon);
  }
  std::vector<double> steps;
  for (std::size_t k = 1; k < path.size(); ++k) steps.push_back((path[k] - path[k - 1]).norm());
  for (std::size_t k = 1; k + 1 < steps.size(); ++k) {
    INFO("step " << k);
    CHECK(steps[k] <= 10.0 * std::max(steps[k - 1], steps[k + 1]) + 1e-12);
  }
}

TEST_CASE("content anonymization of the desk run") {
  const auto lines = read_lines(desk().dir / "seca" / "edit_reports.jsonl");
  std::size_t edited = 0;
  for (const auto& l : lines) {
    const auto r = json::parse(l);
    edited += r["status"] != "unchanged";
    CHECK(r["errors"].empty());
  }
  CHECK(edited > 0);
  const auto before = json::parse(read_file(desk().dir / "eval_content_ignorant" / "report.json"));
  CHECK(before["eer"].get<double>() > 0.0);
}
