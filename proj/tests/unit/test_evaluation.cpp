#include <doctest.h>

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flowik/chain_io.hpp"
#include "flowik/datagen.hpp"
#include "flowik/errors.hpp"
#include "flowik/evaluation.hpp"

using namespace flowik;

namespace {

Eigen::MatrixXd normal_rows(Eigen::Index n, Eigen::Index k, double mean, Rng& rng) {
  std::normal_distribution<double> d(mean, 1.0);
  Eigen::MatrixXd m(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) m(i, j) = d(rng);
  }
  return m;
}

// Direct double loop over the U-statistic definition.
double reference_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                      const std::vector<double>& bandwidths) {
  auto k = [](double b, const Eigen::VectorXd& a, const Eigen::VectorXd& c) {
    return b / (b + (a - c).squaredNorm());
  };
  const double n = static_cast<double>(x.rows());
  const double m = static_cast<double>(y.rows());
  double total = 0.0;
  for (double b : bandwidths) {
    double xx = 0.0, yy = 0.0, xy = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.rows(); ++j) {
        if (i != j) xx += k(b, x.row(i), x.row(j));
      }
    }
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      for (Eigen::Index j = 0; j < y.rows(); ++j) {
        if (i != j) yy += k(b, y.row(i), y.row(j));
      }
    }
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < y.rows(); ++j) xy += k(b, x.row(i), y.row(j));
    }
    total += xx / (n * (n - 1)) + yy / (m * (m - 1)) - 2 * xy / (n * m);
  }
  return total;
}

FlowModel small_rail_model(std::uint64_t seed) {
  FlowConfig cfg = FlowConfig::defaults_for("raily_chain3", 4, 2, true);
  cfg.hidden = {16};
  cfg.seed = seed;
  return FlowModel(cfg);
}

}  // namespace

TEST_CASE("mmd estimator") {
  Rng rng(1);
  const Eigen::MatrixXd x = normal_rows(40, 3, 0.0, rng);
  const Eigen::MatrixXd y = normal_rows(30, 3, 0.5, rng);
  const std::vector<double> bw = MMDConfig{}.bandwidths;
  CHECK(bw == std::vector<double>{0.25, 1.0, 4.0});

  CHECK(mmd_squared_unbiased(x, y) == doctest::Approx(reference_mmd2(x, y, bw)).epsilon(1e-12));
  CHECK(mmd_squared_unbiased(x, y) == mmd_squared_unbiased(y, x));
  CHECK(mmd(x, y) == mmd(y, x));

  // Row order does not matter, bit for bit.
  Eigen::MatrixXd xr = x.colwise().reverse();
  CHECK(mmd_squared_unbiased(xr, y) == mmd_squared_unbiased(x, y));

  // Identical sets: the cross term keeps the k(x, x) = 1 diagonal that the
  // within terms drop, so the unbiased estimate is negative and reports 0.
  CHECK(mmd_squared_unbiased(x, x) < 0.0);
  CHECK(mmd(x, x) == 0.0);
  const Eigen::MatrixXd same = Eigen::MatrixXd::Ones(10, 2);
  CHECK(std::abs(mmd_squared_unbiased(same, same)) <= 1e-12);
  CHECK(mmd(same, same) == 0.0);

  CHECK_THROWS_AS(mmd(x.topRows(1), y), DimensionError);
  CHECK_THROWS_AS(mmd(x, y.leftCols(2)), DimensionError);
  MMDConfig bad;
  bad.bandwidths = {1.0, -1.0};
  CHECK_THROWS_AS(mmd(x, y, bad), std::invalid_argument);
  bad.bandwidths.clear();
  CHECK_THROWS_AS(mmd(x, y, bad), std::invalid_argument);
}

TEST_CASE("mmd separates shifted gaussians") {
  Rng rng(2);
  const Eigen::MatrixXd x = normal_rows(200, 1, 0.0, rng);
  const Eigen::MatrixXd x2 = normal_rows(200, 1, 0.0, rng);
  const Eigen::MatrixXd y = normal_rows(200, 1, 5.0, rng);
  const double far = mmd(x, y);
  const double near = mmd(x, x2);
  CHECK(far > 10 * near);
  CHECK(far > 0.5);
}

TEST_CASE("mmd grows with offset") {
  Rng rng(3);
  const Eigen::MatrixXd x = normal_rows(50, 2, 0.0, rng);
  const Eigen::MatrixXd y = normal_rows(50, 2, 0.0, rng);
  double previous = mmd_squared_unbiased(x, y);
  for (double offset : {1.0, 2.0, 4.0, 8.0, 16.0}) {
    const double v = mmd_squared_unbiased(x, y.array() + offset);
    CHECK(v > previous);
    previous = v;
  }
}

TEST_CASE("accuracy of exact solutions is bounded by the refinement tolerance") {
  const KinematicChain chain = load_chain("raily_chain3");
  AccuracyOptions opts;
  opts.n_poses = 20;
  opts.n_solutions = 10;
  opts.seed = 4;
  const AccuracyResult r = accuracy_eval(ground_truth_sampler(chain), chain, opts);
  CHECK(r.per_pose.size() == 20);
  CHECK(r.mean_pos_err_mm <= 1e-3);
  CHECK(r.mean_ang_err_deg == 0.0);

  const KinematicChain arm = load_chain("arm7");
  opts.n_poses = 5;
  const AccuracyResult a = accuracy_eval(ground_truth_sampler(arm), arm, opts);
  CHECK(a.mean_pos_err_mm <= 1e-3);
  CHECK(a.mean_ang_err_deg <= 1e-6 * 180 / 3.14159);
}

TEST_CASE("accuracy and coverage do not depend on thread count") {
  const KinematicChain chain = load_chain("raily_chain3");
  FlowModel m = small_rail_model(1);
  Rng rng(5);
  m.randomize_parameters(rng, 0.5);

  AccuracyOptions acc{16, 8, 0.25, 6, 1};
  const AccuracyResult a1 = accuracy_eval(m, chain, acc);
  acc.threads = 3;
  const AccuracyResult a3 = accuracy_eval(m, chain, acc);
  CHECK(a1.mean_pos_err_mm == a3.mean_pos_err_mm);

  MMDScoreOptions cov;
  cov.n_poses = 6;
  cov.n_solutions = 10;
  cov.seed = 7;
  const MMDScoreResult m1 = mmd_score(m, chain, 0.25, cov);
  cov.threads = 3;
  const MMDScoreResult m3 = mmd_score(m, chain, 0.25, cov);
  CHECK(m1.score == m3.score);
  CHECK(m1.per_pose.size() == 6);
}

TEST_CASE("coverage score ordering") {
  const KinematicChain chain = load_chain("raily_chain3");
  MMDScoreOptions cov;
  cov.n_poses = 10;
  cov.n_solutions = 30;
  cov.seed = 8;
  const MMDScoreResult truth = mmd_score(ground_truth_sampler(chain), chain, cov);
  const MMDScoreResult fresh = mmd_score(small_rail_model(2), chain, 1.0, cov);
  CHECK(truth.skipped == 0);
  CHECK(truth.score < 0.05);
  CHECK(fresh.score > 5 * truth.score);
}

TEST_CASE("poses with too little ground truth are skipped") {
  const KinematicChain chain = load_chain("raily_chain3");
  MMDScoreOptions cov;
  cov.n_poses = 3;
  cov.n_solutions = 4;
  cov.min_ground_truth = 5;
  const MMDScoreResult r = mmd_score(ground_truth_sampler(chain), chain, cov);
  CHECK(r.skipped == 3);
  CHECK(std::isnan(r.score));
}

TEST_CASE("runtime table and linear fit") {
  const KinematicChain chain = load_chain("raily_chain3");
  const FlowModel m = small_rail_model(3);
  const auto table = runtime_benchmark(m, chain, {0, 100, 400}, 5);
  REQUIRE(table.size() == 3);
  CHECK(table[0].count == 0);
  CHECK(table[0].ms < 0.5);
  CHECK(table[1].ms > 0.0);
  CHECK(table[2].ms >= table[1].ms);
  CHECK_THROWS_AS(runtime_benchmark(m, chain, {10}, 0), std::invalid_argument);

  const LinearFit exact = fit_runtime({{100, 3.0}, {200, 5.0}, {400, 9.0}, {800, 17.0}});
  CHECK(exact.slope == doctest::Approx(0.02));
  CHECK(exact.intercept == doctest::Approx(1.0));
  CHECK(exact.max_abs_residual < 1e-12);
  CHECK(exact.mean == doctest::Approx(8.5));

  const LinearFit bent = fit_runtime({{100, 1.0}, {200, 1.0}, {400, 1.0}, {800, 20.0}});
  CHECK(bent.max_abs_residual > 0.2 * bent.mean);
}

TEST_CASE("latent scale sweep") {
  const KinematicChain chain = load_chain("raily_chain3");
  FlowModel m = small_rail_model(4);
  AccuracyOptions acc{8, 8, 0.25, 1, 1};
  MMDScoreOptions cov;
  cov.n_poses = 3;
  cov.n_solutions = 10;
  const auto one = latent_scale_sweep(m, chain, {0.5}, acc, cov);
  REQUIRE(one.size() == 1);
  CHECK(one[0].latent_scale == 0.5);
  CHECK(one[0].mean_pos_err_mm > 0.0);
  CHECK(one[0].mmd_score >= 0.0);
  CHECK_THROWS_AS(latent_scale_sweep(m, chain, {1.5}, acc, cov), std::invalid_argument);
  CHECK_THROWS_AS(latent_scale_sweep(m, chain, {0.0}, acc, cov), std::invalid_argument);
}

TEST_CASE("complexity probe bookkeeping") {
  const KinematicChain chain = load_chain("raily_chain3");
  ProbeOptions opts;
  opts.train.max_batches = 20;
  opts.hidden = {8};
  opts.num_layers = 2;
  opts.dataset_size = 512;
  opts.eval_interval = 10;
  opts.eval = {4, 4, 0.25, 0, 1};
  opts.seeds = {1, 2};

  // Unreachable threshold: every run is censored at max_batches.
  const auto r = complexity_probe({chain, chain}, 1e-9, opts);
  REQUIRE(r.size() == 2);
  CHECK(r[0].sum_joint_limit_ranges == r[1].sum_joint_limit_ranges);
  CHECK(r[0].batches == std::vector<std::uint64_t>{20, 20});
  CHECK(r[0].censored == std::vector<bool>{true, true});
  CHECK(r[0].mean_batches == 20.0);

  // Trivial threshold: reached at the first check.
  const auto easy = complexity_probe({chain}, 1e3, opts);
  REQUIRE(easy.size() == 1);
  CHECK(easy[0].batches == std::vector<std::uint64_t>{10, 10});
  CHECK(easy[0].censored == std::vector<bool>{false, false});
}

TEST_CASE("report writers") {
  EvalReport rep;
  rep.latent_scale = 0.25;
  rep.mmd_score = 0.5;
  rep.mean_pos_err_mm = 12.0;
  rep.runtime_table = {{100, 1.5}};

  std::ostringstream csv;
  write_summary_csv(csv, {rep});
  CHECK(csv.str() == "latent_scale,mmd_score,mean_pos_err_mm,mean_ang_err_deg\n0.25,0.5,12,0\n");

  std::ostringstream js;
  write_summary_json(js, {rep});
  const auto doc = nlohmann::json::parse(js.str());
  CHECK(doc[0]["mean_pos_err_mm"] == 12.0);
  CHECK(doc[0]["runtime"][0]["count"] == 100);

  std::ostringstream rt;
  write_runtime_csv(rt, rep.runtime_table);
  CHECK(rt.str() == "count,ms\n100,1.500000\n");
}
