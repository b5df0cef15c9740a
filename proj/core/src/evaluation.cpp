#include "flowik/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "flowik/datagen.hpp"
#include "flowik/errors.hpp"

namespace flowik {

namespace {

double sorted_sum(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum;
}

double squared_distance(const Eigen::MatrixXd& a, Eigen::Index i,
                        const Eigen::MatrixXd& b, Eigen::Index j) {
  double d = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    const double diff = a(i, k) - b(j, k);
    d += diff * diff;
  }
  return d;
}

// Mean kernel value over distinct pairs within one sample set.
double within_term(const Eigen::MatrixXd& x, double bandwidth) {
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(x.rows() * (x.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
      values.push_back(bandwidth / (bandwidth + squared_distance(x, i, x, j)));
    }
  }
  const double pairs = static_cast<double>(values.size());
  return sorted_sum(values) / pairs;
}

double cross_term(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                  double bandwidth) {
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(x.rows() * y.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      values.push_back(bandwidth / (bandwidth + squared_distance(x, i, y, j)));
    }
  }
  return sorted_sum(values) / static_cast<double>(values.size());
}

}  // namespace

void MMDConfig::validate() const {
  if (bandwidths.empty()) throw std::invalid_argument("MMD needs at least one bandwidth");
  for (double b : bandwidths) {
    if (!(b > 0.0)) throw std::invalid_argument("MMD bandwidths must be positive");
  }
}

double mmd_squared_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                            const MMDConfig& cfg) {
  cfg.validate();
  if (x.rows() < 2 || y.rows() < 2) {
    throw DimensionError("MMD needs at least two samples per set");
  }
  if (x.cols() != y.cols()) {
    throw DimensionError("MMD sample sets have different dimensions");
  }
  double total = 0.0;
  for (double b : cfg.bandwidths) {
    // Added as (xx + yy) so that swapping x and y is bit-exact.
    total += (within_term(x, b) + within_term(y, b)) - 2.0 * cross_term(x, y, b);
  }
  return total;
}

double mmd(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const MMDConfig& cfg) {
  return std::max(0.0, mmd_squared_unbiased(x, y, cfg));
}

// ---------------------------------------------------------------- samplers

SolutionSampler flow_sampler(const FlowModel& model, const KinematicChain& chain,
                             double latent_scale) {
  if (model.dof() != static_cast<int>(chain.dof()) ||
      model.cond_dim() != pose_encoding_dim(chain) + 1) {
    throw DimensionError("model '" + model.config().chain_name +
                         "' does not fit chain '" + chain.name() + "'");
  }
  return [&model, &chain, latent_scale](const Pose& target, int count, Rng& rng) {
    return sample_solutions(model, encode_condition(chain, target), count,
                            latent_scale, rng);
  };
}

SolutionSampler ground_truth_sampler(const KinematicChain& chain,
                                     const GroundTruthOptions& options) {
  return [&chain, options](const Pose& target, int count, Rng& rng) {
    const auto sols = ground_truth_solutions(
        chain, target, static_cast<std::size_t>(std::max(0, count)), rng, options);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(sols.size()),
                        static_cast<Eigen::Index>(chain.dof()));
    for (std::size_t i = 0; i < sols.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = sols[i].transpose();
    }
    return out;
  };
}

// ---------------------------------------------------------------- coverage

MMDScoreResult mmd_score(const SolutionSampler& candidate, const KinematicChain& chain,
                         const MMDScoreOptions& options) {
  options.mmd.validate();
  MMDScoreResult result;
  result.per_pose.resize(static_cast<std::size_t>(std::max(0, options.n_poses)));
  const SolutionSampler truth = ground_truth_sampler(chain, options.ground_truth);

  parallel_for(result.per_pose.size(), options.threads, [&](std::size_t i) {
    Rng rng = make_stream(options.seed, i);
    PoseMMD& entry = result.per_pose[i];
    entry.target = forward_kinematics(chain, sample_uniform_config(chain, rng));
    const Eigen::MatrixXd reference = truth(entry.target, options.n_solutions, rng);
    entry.ground_truth_count = static_cast<int>(reference.rows());
    if (reference.rows() < std::max(2, options.min_ground_truth)) {
      entry.skipped = true;
      return;
    }
    const Eigen::MatrixXd samples = candidate(entry.target, options.n_solutions, rng);
    if (samples.rows() < 2) {
      entry.skipped = true;
      return;
    }
    entry.value = mmd(samples, reference, options.mmd);
  });

  double sum = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < result.per_pose.size(); ++i) {
    const PoseMMD& e = result.per_pose[i];
    if (e.skipped) {
      ++result.skipped;
      spdlog::info("mmd_score: pose {} skipped ({} ground truth solutions)", i,
                   e.ground_truth_count);
      continue;
    }
    sum += e.value;
    ++used;
  }
  result.score = used > 0 ? sum / used : std::numeric_limits<double>::quiet_NaN();
  return result;
}

MMDScoreResult mmd_score(const FlowModel& model, const KinematicChain& chain,
                         double latent_scale, const MMDScoreOptions& options) {
  return mmd_score(flow_sampler(model, chain, latent_scale), chain, options);
}

// ---------------------------------------------------------------- accuracy

AccuracyResult accuracy_eval(const SolutionSampler& sampler, const KinematicChain& chain,
                             const AccuracyOptions& options) {
  AccuracyResult result;
  result.per_pose.resize(static_cast<std::size_t>(std::max(0, options.n_poses)));
  parallel_for(result.per_pose.size(), options.threads, [&](std::size_t i) {
    Rng rng = make_stream(options.seed, i);
    PoseAccuracy& entry = result.per_pose[i];
    entry.target = forward_kinematics(chain, sample_uniform_config(chain, rng));
    const Eigen::MatrixXd sols = sampler(entry.target, options.n_solutions, rng);
    entry.solutions = static_cast<int>(sols.rows());
    double pos = 0.0;
    double ang = 0.0;
    for (Eigen::Index r = 0; r < sols.rows(); ++r) {
      const PoseError e = task_errors(
          chain, entry.target, forward_kinematics(chain, sols.row(r).transpose()));
      pos += e.position;
      ang += e.angular;
    }
    if (entry.solutions > 0) {
      entry.mean_pos_err_m = pos / entry.solutions;
      entry.mean_ang_err_rad = ang / entry.solutions;
    }
  });

  double pos = 0.0;
  double ang = 0.0;
  long total = 0;
  for (const auto& e : result.per_pose) {
    pos += e.mean_pos_err_m * e.solutions;
    ang += e.mean_ang_err_rad * e.solutions;
    total += e.solutions;
  }
  if (total > 0) {
    result.mean_pos_err_mm = 1000.0 * pos / static_cast<double>(total);
    result.mean_ang_err_deg = (180.0 / std::numbers::pi) * ang / static_cast<double>(total);
  }
  return result;
}

AccuracyResult accuracy_eval(const FlowModel& model, const KinematicChain& chain,
                             const AccuracyOptions& options) {
  return accuracy_eval(flow_sampler(model, chain, options.latent_scale), chain, options);
}

// ---------------------------------------------------------------- runtime

std::vector<RuntimeRow> runtime_benchmark(const FlowModel& model,
                                          const KinematicChain& chain,
                                          const std::vector<int>& counts, int repeats,
                                          std::uint64_t seed) {
  if (repeats < 1) throw std::invalid_argument("runtime_benchmark needs repeats >= 1");
  std::vector<RuntimeRow> table;
  Rng rng(seed);
  for (int count : counts) {
    const Pose target = forward_kinematics(chain, sample_uniform_config(chain, rng));
    const Eigen::VectorXd enc = encode_condition(chain, target);
    (void)sample_solutions(model, enc, count, 0.25, rng);  // warm-up
    std::vector<double> times;
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const Eigen::MatrixXd sols = sample_solutions(model, enc, count, 0.25, rng);
      const auto t1 = std::chrono::steady_clock::now();
      if (sols.rows() != count) throw DimensionError("sampler returned wrong count");
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::nth_element(times.begin(), times.begin() + static_cast<long>(times.size() / 2),
                     times.end());
    table.push_back({count, times[times.size() / 2]});
  }
  return table;
}

LinearFit fit_runtime(const std::vector<RuntimeRow>& table) {
  LinearFit fit;
  if (table.empty()) return fit;
  const auto n = static_cast<Eigen::Index>(table.size());
  Eigen::MatrixXd a(n, 2);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a(i, 0) = 1.0;
    a(i, 1) = table[static_cast<std::size_t>(i)].count;
    b[i] = table[static_cast<std::size_t>(i)].ms;
  }
  const Eigen::Vector2d coef = a.colPivHouseholderQr().solve(b);
  const Eigen::VectorXd residual = b - a * coef;
  fit.intercept = coef[0];
  fit.slope = coef[1];
  fit.rms_residual = std::sqrt(residual.squaredNorm() / static_cast<double>(n));
  fit.max_abs_residual = residual.cwiseAbs().maxCoeff();
  fit.mean = b.mean();
  return fit;
}

// ---------------------------------------------------------------- sweeps

std::vector<EvalReport> latent_scale_sweep(const FlowModel& model,
                                           const KinematicChain& chain,
                                           const std::vector<double>& scales,
                                           const AccuracyOptions& accuracy,
                                           const MMDScoreOptions& coverage) {
  std::vector<EvalReport> reports;
  for (double scale : scales) {
    if (!(scale > 0.0 && scale <= 1.0)) {
      throw std::invalid_argument("latent scales must lie in (0, 1]");
    }
    AccuracyOptions acc = accuracy;
    acc.latent_scale = scale;
    const AccuracyResult a = accuracy_eval(model, chain, acc);
    const MMDScoreResult m = mmd_score(model, chain, scale, coverage);
    EvalReport r;
    r.latent_scale = scale;
    r.mean_pos_err_mm = a.mean_pos_err_mm;
    r.mean_ang_err_deg = a.mean_ang_err_deg;
    r.mmd_score = m.score;
    reports.push_back(std::move(r));
  }
  return reports;
}

std::vector<ProbeResult> complexity_probe(const std::vector<KinematicChain>& variants,
                                          double threshold_pos_err_m,
                                          const ProbeOptions& options) {
  std::vector<ProbeResult> results;
  for (const KinematicChain& chain : variants) {
    ProbeResult pr;
    pr.sum_joint_limit_ranges = sum_joint_limit_ranges(chain);
    for (std::uint64_t seed : options.seeds) {
      const Dataset ds = generate_dataset(chain, options.dataset_size,
                                          stream_seed(seed, 11), options.eval.threads);
      FlowConfig arch = FlowConfig::defaults_for(
          chain.name(), static_cast<int>(chain.dof()), pose_encoding_dim(chain),
          chain.task_space() == TaskSpace::planar_xy);
      arch.num_layers = options.num_layers;
      arch.hidden = options.hidden;
      arch.seed = stream_seed(seed, 12);
      TrainConfig cfg = options.train;
      cfg.rng_seed = stream_seed(seed, 13);

      AccuracyOptions eval = options.eval;
      eval.seed = stream_seed(seed, 14);
      std::uint64_t reached = 0;
      TrainCallbacks callbacks;
      callbacks.interval = options.eval_interval;
      callbacks.on_interval = [&](const FlowModel& m, const TrainState& st) {
        const double err_mm = accuracy_eval(m, chain, eval).mean_pos_err_mm;
        spdlog::debug("probe {} seed {} batch {}: {:.2f} mm", chain.name(), seed,
                      st.batch_counter, err_mm);
        if (err_mm <= 1000.0 * threshold_pos_err_m) {
          reached = st.batch_counter;
          return false;
        }
        return true;
      };
      train(chain, ds, cfg, arch, callbacks);
      pr.censored.push_back(reached == 0);
      pr.batches.push_back(reached == 0 ? cfg.max_batches : reached);
    }
    double sum = 0.0;
    for (auto b : pr.batches) sum += static_cast<double>(b);
    pr.mean_batches = pr.batches.empty() ? 0.0 : sum / static_cast<double>(pr.batches.size());
    results.push_back(std::move(pr));
  }
  return results;
}

// ---------------------------------------------------------------- writers

void write_accuracy_csv(std::ostream& out, const AccuracyResult& result) {
  out << "pose,target_x,target_y,target_z,solutions,mean_pos_err_m,mean_ang_err_rad\n";
  for (std::size_t i = 0; i < result.per_pose.size(); ++i) {
    const auto& e = result.per_pose[i];
    fmt::print(out, "{},{:.9g},{:.9g},{:.9g},{},{:.9g},{:.9g}\n", i,
               e.target.position.x(), e.target.position.y(), e.target.position.z(),
               e.solutions, e.mean_pos_err_m, e.mean_ang_err_rad);
  }
}

void write_mmd_csv(std::ostream& out, const MMDScoreResult& result) {
  out << "pose,target_x,target_y,target_z,ground_truth_count,skipped,mmd\n";
  for (std::size_t i = 0; i < result.per_pose.size(); ++i) {
    const auto& e = result.per_pose[i];
    fmt::print(out, "{},{:.9g},{:.9g},{:.9g},{},{},{:.9g}\n", i, e.target.position.x(),
               e.target.position.y(), e.target.position.z(), e.ground_truth_count,
               e.skipped ? 1 : 0, e.value);
  }
}

void write_summary_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << "latent_scale,mmd_score,mean_pos_err_mm,mean_ang_err_deg\n";
  for (const auto& r : reports) {
    fmt::print(out, "{:.9g},{:.9g},{:.9g},{:.9g}\n", r.latent_scale, r.mmd_score,
               r.mean_pos_err_mm, r.mean_ang_err_deg);
  }
}

void write_summary_json(std::ostream& out, const std::vector<EvalReport>& reports) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json runtime = nlohmann::json::array();
    for (const auto& row : r.runtime_table) {
      runtime.push_back({{"count", row.count}, {"ms", row.ms}});
    }
    doc.push_back({{"latent_scale", r.latent_scale},
                   {"mmd_score", r.mmd_score},
                   {"mean_pos_err_mm", r.mean_pos_err_mm},
                   {"mean_ang_err_deg", r.mean_ang_err_deg},
                   {"runtime", std::move(runtime)}});
  }
  out << doc.dump(2) << '\n';
}

void write_runtime_csv(std::ostream& out, const std::vector<RuntimeRow>& table) {
  out << "count,ms\n";
  for (const auto& row : table) fmt::print(out, "{},{:.6f}\n", row.count, row.ms);
}

}  // namespace flowik
