#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowik/flow.hpp"
#include "flowik/kinematics.hpp"
#include "flowik/training.hpp"

namespace flowik {

/// Inverse multi-quadric kernels k_b(x, y) = b / (b + |x - y|^2), summed
/// over the bandwidth ladder.
struct MMDConfig {
  std::vector<double> bandwidths = {0.25, 1.0, 4.0};

  void validate() const;
};

/// Unbiased (U-statistic) estimate of MMD^2 between the rows of X and Y,
/// summed over bandwidths. May be negative. Exactly symmetric in (X, Y) and
/// invariant to row order.
double mmd_squared_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                            const MMDConfig& cfg = {});

/// mmd_squared_unbiased floored at 0, as reported. Requires >= 2 rows each
/// and equal column counts (DimensionError otherwise).
double mmd(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
           const MMDConfig& cfg = {});

/// Produces `count` candidate solutions (count x dof) for a target pose.
using SolutionSampler =
    std::function<Eigen::MatrixXd(const Pose& target, int count, Rng& rng)>;

SolutionSampler flow_sampler(const FlowModel& model, const KinematicChain& chain,
                             double latent_scale);
/// DLS refinement from uniform seeds; may return fewer rows than requested.
SolutionSampler ground_truth_sampler(const KinematicChain& chain,
                                     const GroundTruthOptions& options = {});

struct MMDScoreOptions {
  int n_poses = 100;
  int n_solutions = 50;
  /// Poses whose ground truth set is smaller than this are skipped.
  int min_ground_truth = 5;
  std::uint64_t seed = 0;
  int threads = 1;
  MMDConfig mmd;
  GroundTruthOptions ground_truth;
};

struct PoseMMD {
  Pose target;
  double value = 0.0;
  int ground_truth_count = 0;
  bool skipped = false;
};

struct MMDScoreResult {
  double score = 0.0;  // mean over non-skipped poses
  std::vector<PoseMMD> per_pose;
  int skipped = 0;
};

/// Averages mmd(candidate, ground truth) over random reachable poses. Each
/// pose draws from its own generator stream so the result does not depend
/// on `threads`.
MMDScoreResult mmd_score(const SolutionSampler& candidate,
                         const KinematicChain& chain,
                         const MMDScoreOptions& options);
MMDScoreResult mmd_score(const FlowModel& model, const KinematicChain& chain,
                         double latent_scale, const MMDScoreOptions& options);

struct AccuracyOptions {
  int n_poses = 200;
  int n_solutions = 100;
  double latent_scale = 0.25;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct PoseAccuracy {
  Pose target;
  double mean_pos_err_m = 0.0;
  double mean_ang_err_rad = 0.0;
  int solutions = 0;
};

struct AccuracyResult {
  double mean_pos_err_mm = 0.0;
  double mean_ang_err_deg = 0.0;
  std::vector<PoseAccuracy> per_pose;
};

/// Mean task-space error between random reachable targets and the forward
/// kinematics of the sampled solutions, over all (pose, solution) pairs.
AccuracyResult accuracy_eval(const SolutionSampler& sampler,
                             const KinematicChain& chain,
                             const AccuracyOptions& options);
AccuracyResult accuracy_eval(const FlowModel& model, const KinematicChain& chain,
                             const AccuracyOptions& options);

struct RuntimeRow {
  int count = 0;
  double ms = 0.0;
};

/// Median wall time of sample_solutions per requested count over `repeats`
/// timed calls, after one untimed warm-up call per count.
std::vector<RuntimeRow> runtime_benchmark(const FlowModel& model,
                                          const KinematicChain& chain,
                                          const std::vector<int>& counts,
                                          int repeats, std::uint64_t seed = 0);

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double rms_residual = 0.0;
  double max_abs_residual = 0.0;
  double mean = 0.0;
};

/// Least-squares line ms = intercept + slope * count.
LinearFit fit_runtime(const std::vector<RuntimeRow>& table);

struct EvalReport {
  double mmd_score = 0.0;
  double mean_pos_err_mm = 0.0;
  double mean_ang_err_deg = 0.0;
  std::vector<RuntimeRow> runtime_table;
  double latent_scale = 0.0;
};

/// accuracy_eval and mmd_score at each latent scale. The scale fields of the
/// option structs are overridden per entry.
std::vector<EvalReport> latent_scale_sweep(const FlowModel& model,
                                           const KinematicChain& chain,
                                           const std::vector<double>& scales,
                                           const AccuracyOptions& accuracy,
                                           const MMDScoreOptions& coverage);

struct ProbeOptions {
  TrainConfig train;             // max_batches is the censoring limit
  int num_layers = 6;
  std::vector<int> hidden = {128, 128, 128};
  std::size_t dataset_size = 200000;
  std::size_t eval_interval = 1000;  // batches between accuracy checks
  AccuracyOptions eval{50, 20, 0.25, 0, 1};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct ProbeResult {
  double sum_joint_limit_ranges = 0.0;
  double mean_batches = 0.0;
  std::vector<std::uint64_t> batches;  // per seed
  std::vector<bool> censored;          // per seed: threshold never reached
};

/// For each chain variant and seed: generate a dataset, train until the
/// held-out mean position error drops below `threshold_pos_err_m` (checked
/// every eval_interval batches) or train.max_batches is reached. Censored
/// runs count as max_batches.
std::vector<ProbeResult> complexity_probe(const std::vector<KinematicChain>& variants,
                                          double threshold_pos_err_m,
                                          const ProbeOptions& options);

// Report writers (CSV with a header row; JSON summary).
void write_accuracy_csv(std::ostream& out, const AccuracyResult& result);
void write_mmd_csv(std::ostream& out, const MMDScoreResult& result);
void write_summary_csv(std::ostream& out, const std::vector<EvalReport>& reports);
void write_summary_json(std::ostream& out, const std::vector<EvalReport>& reports);
void write_runtime_csv(std::ostream& out, const std::vector<RuntimeRow>& table);

}  // namespace flowik
