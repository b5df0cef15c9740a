#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/spdlog.h>

#include "flowik/chain_io.hpp"
#include "flowik/checkpoint.hpp"
#include "flowik/datagen.hpp"
#include "flowik/errors.hpp"
#include "flowik/evaluation.hpp"
#include "flowik/flow.hpp"
#include "flowik/kinematics.hpp"
#include "flowik/log.hpp"
#include "flowik/random.hpp"
#include "flowik/training.hpp"
#include "settings.hpp"

namespace flowik::cli {
namespace {

namespace fs = std::filesystem;

// Bad user input that got past the argument parser.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Substream ids under --seed, one per consumer.
enum Stream : std::uint64_t {
  kArchStream = 1,
  kTrainStream = 2,
  kSampleStream = 3,
  kAccuracyStream = 4,
  kCoverageStream = 5,
  kBenchStream = 6,
};

double parse_real(const std::string& text, const std::string& what) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw UsageError(fmt::format("{}: '{}' is not a finite number", what, text));
  }
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ',' || c == ' ') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

std::vector<double> parse_reals(const std::string& text, const std::string& what) {
  std::vector<double> v;
  for (const std::string& p : split_list(text)) v.push_back(parse_real(p, what));
  return v;
}

std::vector<int> parse_ints(const std::string& text, const std::string& what) {
  std::vector<int> v;
  for (const std::string& p : split_list(text)) {
    int x = 0;
    auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), x);
    if (ec != std::errc() || ptr != p.data() + p.size()) {
      throw UsageError(fmt::format("{}: '{}' is not an integer", what, p));
    }
    v.push_back(x);
  }
  return v;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError(flag + " is required");
}

// File or stdout ("-").
class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : path_(path), fallback_(fallback) {
    if (path.empty() || path == "-") return;
    file_.emplace(path, std::ios::binary | std::ios::trunc);
    if (!*file_) throw FormatError("cannot open " + path + " for writing");
  }
  std::ostream& stream() { return file_ ? *file_ : fallback_; }
  void close() {
    if (!file_) {
      fallback_.flush();
      return;
    }
    file_->close();
    if (file_->fail()) throw FormatError("error writing " + path_);
  }

 private:
  std::string path_;
  std::ostream& fallback_;
  std::optional<std::ofstream> file_;
};

struct ModelBundle {
  FlowModel model;
  KinematicChain chain;
  CheckpointInfo info;
};

KinematicChain chain_for_checkpoint(const LoadedCheckpoint& lc, const std::string& override_chain) {
  if (!override_chain.empty()) return load_chain(override_chain);
  if (!lc.info.chain_document.empty()) return parse_chain(lc.info.chain_document);
  return load_chain(lc.model.config().chain_name);
}

ModelBundle open_model(const std::string& path, const std::string& override_chain) {
  LoadedCheckpoint lc = load_checkpoint(path);
  KinematicChain chain = chain_for_checkpoint(lc, override_chain);
  if (static_cast<int>(chain.dof()) != lc.model.dof() ||
      pose_encoding_dim(chain) + 1 != lc.model.cond_dim()) {
    throw FormatError(fmt::format("checkpoint {} does not fit chain '{}'", path, chain.name()));
  }
  return {std::move(lc.model), std::move(chain), std::move(lc.info)};
}

Eigen::VectorXd parse_config(const KinematicChain& chain, const std::string& text,
                             const std::string& what) {
  const Eigen::VectorXd q = to_vector(parse_reals(text, what));
  if (static_cast<std::size_t>(q.size()) != chain.dof()) {
    throw UsageError(fmt::format("{}: expected {} joint values for '{}', got {}", what,
                                 chain.dof(), chain.name(), q.size()));
  }
  if (!within_limits(chain, q)) throw UsageError(what + ": joint values outside the limits");
  return q;
}

// Target from --pose (encoded pose) or --target-joints (FK of a config).
Pose target_pose(const KinematicChain& chain, const std::string& pose_text,
                 const std::string& joints_text) {
  if (pose_text.empty() == joints_text.empty()) {
    throw UsageError("give exactly one of --pose and --target-joints");
  }
  if (!joints_text.empty()) {
    return forward_kinematics(chain, parse_config(chain, joints_text, "--target-joints"));
  }
  Eigen::VectorXd enc = to_vector(parse_reals(pose_text, "--pose"));
  const int dim = pose_encoding_dim(chain);
  if (enc.size() != dim) {
    throw UsageError(fmt::format("--pose: chain '{}' takes {} values ({}), got {}", chain.name(),
                                 dim, dim == 2 ? "x y" : "x y z qw qx qy qz", enc.size()));
  }
  if (dim == 7) {
    const double n = enc.tail<4>().norm();
    if (n < 1e-12) throw UsageError("--pose: quaternion has zero norm");
    enc.tail<4>() /= n;
  }
  return decode_condition(chain, enc);
}

std::string format_pose(const Pose& p) {
  // Tiny values print as 0, never as -0.
  auto clean = [](double v, double eps) { return std::abs(v) < eps ? 0.0 : v; };
  const Eigen::Quaterniond& q = p.orientation;
  return fmt::format("{:.9f} {:.9f} {:.9f} | {:.9g} {:.9g} {:.9g} {:.9g}",
                     clean(p.position.x(), 5e-10), clean(p.position.y(), 5e-10),
                     clean(p.position.z(), 5e-10), clean(q.w(), 5e-10), clean(q.x(), 5e-10),
                     clean(q.y(), 5e-10), clean(q.z(), 5e-10));
}

std::string joint_header(std::size_t dof) {
  std::string h;
  for (std::size_t j = 0; j < dof; ++j) h += fmt::format("joint_{},", j);
  return h;
}

// Joint columns of a solution CSV (header joint_0.., any extra columns are
// ignored). Returns rows x dof.
Eigen::MatrixXd read_solutions(const std::string& path, std::size_t dof) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::vector<std::size_t> cols(dof);
  for (std::size_t j = 0; j < dof; ++j) {
    const auto it = std::find(header.begin(), header.end(), fmt::format("joint_{}", j));
    if (it == header.end()) throw FormatError(fmt::format("{}: no column joint_{}", path, j));
    cols[j] = static_cast<std::size_t>(it - header.begin());
  }
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) {
      throw FormatError(fmt::format("{}:{}: expected {} fields", path, line_no, header.size()));
    }
    std::vector<double> row(dof);
    for (std::size_t j = 0; j < dof; ++j) {
      try {
        row[j] = parse_real(cells[cols[j]], "value");
      } catch (const UsageError&) {
        throw FormatError(fmt::format("{}:{}: bad number '{}'", path, line_no, cells[cols[j]]));
      }
    }
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dof));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < dof; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  int threads = 0;
  bool print_config = false;
};

struct FkArgs {
  std::string chain;
  std::vector<std::string> values;
  bool clamp = false;
};

struct GenerateArgs {
  std::string chain;
  std::uint64_t count = 250000;
  std::string out;
};

struct TrainArgs {
  std::string data;
  std::string chain;
  std::string out;
  std::string log;
  std::string resume;
  std::uint64_t max_batches = 50000;
  int batch_size = 128;
  double lr = 5e-4;
  double lr_decay = 0.979;
  std::uint64_t decay_interval = 39000;
  double softflow_scale = 1e-3;
  int layers = 6;
  std::string hidden = "128,128,128";
  int width = 0;
  double s_clamp = 2.0;
  std::uint64_t plateau_window = 10000;
  std::uint64_t checkpoint_every = 0;
};

struct SampleArgs {
  std::string model;
  std::string chain;
  std::string pose;
  std::string target_joints;
  int count = 100;
  double latent_scale = 0.25;
  std::string out = "-";
};

struct RefineArgs {
  std::string model;
  std::string chain;
  std::string pose;
  std::string target_joints;
  std::string in;
  std::string out = "-";
  double tolerance = 1e-6;
  int max_iterations = 100;
};

struct EvalArgs {
  std::string model;
  std::string chain;
  std::string scales = "0.25,1.0";
  int poses = 200;
  int solutions = 100;
  int mmd_poses = 100;
  int mmd_solutions = 50;
  std::string runtime_counts = "100,200,400,800";
  int runtime_repeats = 5;
  std::string out_dir = "eval";
};

struct BenchArgs {
  std::string model;
  std::string chain;
  std::string counts = "100,200,400,800";
  int repeats = 20;
  std::string out = "-";
};

int cmd_fk(const FkArgs& a, std::ostream& out, std::ostream& err) {
  const KinematicChain chain = load_chain(a.chain);
  if (a.values.size() != chain.dof()) {
    std::string usage = "usage: flowik fk " + a.chain;
    for (std::size_t j = 0; j < chain.dof(); ++j) usage += fmt::format(" q{}", j);
    throw UsageError(fmt::format("'{}' has {} joints, got {} values\n{}", chain.name(),
                                 chain.dof(), a.values.size(), usage));
  }
  Eigen::VectorXd q(static_cast<Eigen::Index>(chain.dof()));
  for (std::size_t j = 0; j < chain.dof(); ++j) {
    q[static_cast<Eigen::Index>(j)] = parse_real(a.values[j], fmt::format("joint {}", j));
  }
  if (!within_limits(chain, q)) {
    const Eigen::VectorXd c = clamp_to_limits(chain, q);
    for (Eigen::Index j = 0; j < q.size(); ++j) {
      if (c[j] == q[j]) continue;
      const Joint& jt = chain.joint(static_cast<std::size_t>(j));
      if (!a.clamp) {
        throw UsageError(fmt::format("joint {} value {} is outside [{}, {}] (use --clamp)", j,
                                     q[j], jt.lower, jt.upper));
      }
      fmt::print(err, "warning: joint {} value {} clamped to {}\n", j, q[j], c[j]);
    }
    q = c;
  }
  out << format_pose(forward_kinematics(chain, q)) << '\n';
  return kOk;
}

int cmd_generate(const GenerateArgs& a, const Globals& g, std::ostream& out) {
  require(a.chain, "--chain");
  require(a.out, "--out");
  const KinematicChain chain = load_chain(a.chain);
  const Dataset ds = generate_dataset(chain, a.count, g.seed, g.threads);
  save_dataset(ds, a.out);
  fmt::print(out, "wrote {} samples for '{}' to {}\n", ds.size(), chain.name(), a.out);
  return kOk;
}

int cmd_train(const TrainArgs& a, const Globals& g, std::ostream& out) {
  require(a.data, "--data");
  require(a.out, "--out");
  const Dataset ds = load_dataset(a.data);
  const std::string chain_name = a.chain.empty() ? ds.chain_name : a.chain;
  const KinematicChain chain = load_chain(chain_name);
  validate_dataset(chain, ds);

  TrainConfig tc;
  tc.batch_size = a.batch_size;
  tc.lr = a.lr;
  tc.lr_decay = a.lr_decay;
  tc.decay_interval_batches = a.decay_interval;
  tc.softflow_scale_max = a.softflow_scale;
  tc.max_batches = a.max_batches;
  tc.plateau_window = a.plateau_window;
  tc.rng_seed = stream_seed(g.seed, kTrainStream);
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  std::optional<FlowModel> model;
  std::optional<TrainState> state;
  if (!a.resume.empty()) {
    ModelBundle b = open_model(a.resume, chain_name);
    state = load_optimizer_state(a.resume + ".opt", b.model);
    model = std::move(b.model);
  } else {
    FlowConfig arch = FlowConfig::defaults_for(chain.name(), static_cast<int>(chain.dof()),
                                               pose_encoding_dim(chain),
                                               chain.task_space() == TaskSpace::planar_xy);
    arch.num_layers = a.layers;
    arch.hidden = parse_ints(a.hidden, "--hidden");
    if (a.width != 0) arch.width = a.width;
    arch.s_clamp = a.s_clamp;
    arch.seed = stream_seed(g.seed, kArchStream);
    if (arch.num_layers < 1 || arch.width < arch.dof || arch.s_clamp <= 0.0 ||
        std::any_of(arch.hidden.begin(), arch.hidden.end(), [](int h) { return h < 1; })) {
      throw UsageError("invalid architecture (need --layers >= 1, --width >= dof, "
                       "--s-clamp > 0, positive --hidden widths)");
    }
    model.emplace(arch);
    state = TrainState::initial(*model, tc);
  }

  CheckpointInfo info;
  info.chain_document = serialize_chain(chain);
  info.training = {
      {"seed", std::to_string(g.seed)},
      {"dataset_size", std::to_string(ds.size())},
      {"batch_size", std::to_string(tc.batch_size)},
      {"lr", fmt::format("{}", tc.lr)},
      {"lr_decay", fmt::format("{}", tc.lr_decay)},
      {"decay_interval_batches", std::to_string(tc.decay_interval_batches)},
      {"softflow_scale_max", fmt::format("{}", tc.softflow_scale_max)},
  };
  auto save = [&](const FlowModel& m, const TrainState& st) {
    info.training["batches"] = std::to_string(st.batch_counter);
    save_checkpoint(m, a.out, info);
    save_optimizer_state(st, a.out + ".opt");
  };

  Output log(a.log.empty() ? a.out + ".log.csv" : a.log, out);
  log.stream() << "batch,loss,current_lr,wall_ms\n";
  TrainCallbacks cb;
  cb.on_batch = [&](const TrainState& st, double loss, double wall_ms) {
    fmt::print(log.stream(), "{},{:.17g},{:.17g},{:.3f}\n", st.batch_counter, loss,
               st.current_lr, wall_ms);
    if (st.batch_counter % 1000 == 0) {
      spdlog::info("batch {} loss {:.4f} lr {:.3g}", st.batch_counter, loss, st.current_lr);
    }
  };
  if (a.checkpoint_every > 0) {
    cb.interval = a.checkpoint_every;
    cb.on_interval = [&](const FlowModel& m, const TrainState& st) {
      save(m, st);
      return true;
    };
  }

  TrainResult r = train(chain, ds, tc, std::move(*model), std::move(*state), cb);
  log.close();
  save(r.model, r.state);
  fmt::print(out, "trained '{}' to batch {}{}; wrote {}\n", chain.name(), r.state.batch_counter,
             r.stopped_early ? " (stopped early)" : "", a.out);
  return kOk;
}

int cmd_sample(const SampleArgs& a, const Globals& g, std::ostream& out) {
  require(a.model, "--model");
  if (a.count < 0) throw UsageError("--count must be >= 0");
  if (!(a.latent_scale > 0.0)) throw UsageError("--latent-scale must be > 0");
  const ModelBundle b = open_model(a.model, a.chain);
  const Pose target = target_pose(b.chain, a.pose, a.target_joints);

  Rng rng = make_stream(g.seed, kSampleStream);
  const Eigen::MatrixXd sols =
      sample_solutions(b.model, encode_condition(b.chain, target), a.count, a.latent_scale, rng);

  Output o(a.out, out);
  std::ostream& s = o.stream();
  s << joint_header(b.chain.dof()) << "pos_err_m,ang_err_rad\n";
  for (Eigen::Index i = 0; i < sols.rows(); ++i) {
    const Eigen::VectorXd q = sols.row(i).transpose();
    const PoseError e = task_errors(b.chain, target, forward_kinematics(b.chain, q));
    for (Eigen::Index j = 0; j < q.size(); ++j) fmt::print(s, "{:.17g},", q[j]);
    fmt::print(s, "{:.9g},{:.9g}\n", e.position, e.angular);
  }
  o.close();
  return kOk;
}

int cmd_refine(const RefineArgs& a, std::ostream& out, std::ostream& err) {
  require(a.in, "--in");
  if (a.model.empty() && a.chain.empty()) throw UsageError("--model or --chain is required");
  if (!(a.tolerance > 0.0) || a.max_iterations < 0) {
    throw UsageError("--tolerance must be > 0 and --max-iterations >= 0");
  }
  const KinematicChain chain =
      a.model.empty() ? load_chain(a.chain) : open_model(a.model, a.chain).chain;
  const Pose target = target_pose(chain, a.pose, a.target_joints);
  const Eigen::MatrixXd seeds = read_solutions(a.in, chain.dof());

  RefineOptions ro;
  ro.tolerance = a.tolerance;
  ro.max_iterations = a.max_iterations;
  Output o(a.out, out);
  std::ostream& s = o.stream();
  s << joint_header(chain.dof()) << "iterations,converged,pos_err_m,ang_err_rad\n";
  int converged = 0;
  for (Eigen::Index i = 0; i < seeds.rows(); ++i) {
    const RefineResult r = dls_refine(chain, target, seeds.row(i).transpose(), ro);
    const PoseError e = task_errors(chain, target, forward_kinematics(chain, r.q));
    for (Eigen::Index j = 0; j < r.q.size(); ++j) fmt::print(s, "{:.17g},", r.q[j]);
    fmt::print(s, "{},{},{:.9g},{:.9g}\n", r.iterations, r.converged ? 1 : 0, e.position,
               e.angular);
    converged += r.converged ? 1 : 0;
  }
  o.close();
  fmt::print(err, "refined {} seeds, {} converged\n", seeds.rows(), converged);
  return kOk;
}

int cmd_eval(const EvalArgs& a, const Globals& g, std::ostream& out) {
  require(a.model, "--model");
  require(a.out_dir, "--out-dir");
  const std::vector<double> scales = parse_reals(a.scales, "--scales");
  if (scales.empty()) throw UsageError("--scales is empty");
  for (double s : scales) {
    if (!(s > 0.0 && s <= 1.0)) throw UsageError("--scales values must lie in (0, 1]");
  }
  if (a.poses < 1 || a.solutions < 1 || a.mmd_poses < 1 || a.mmd_solutions < 2) {
    throw UsageError("pose and solution counts must be positive (--mmd-solutions >= 2)");
  }
  const std::vector<int> counts = parse_ints(a.runtime_counts, "--runtime-counts");
  const ModelBundle b = open_model(a.model, a.chain);

  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw FormatError("cannot create " + a.out_dir + ": " + ec.message());
  const fs::path dir(a.out_dir);

  std::vector<EvalReport> reports;
  for (double scale : scales) {
    AccuracyOptions acc{a.poses, a.solutions, scale, stream_seed(g.seed, kAccuracyStream),
                        g.threads};
    MMDScoreOptions cov;
    cov.n_poses = a.mmd_poses;
    cov.n_solutions = a.mmd_solutions;
    cov.seed = stream_seed(g.seed, kCoverageStream);
    cov.threads = g.threads;
    const AccuracyResult ar = accuracy_eval(b.model, b.chain, acc);
    const MMDScoreResult mr = mmd_score(b.model, b.chain, scale, cov);

    EvalReport rep;
    rep.latent_scale = scale;
    rep.mean_pos_err_mm = ar.mean_pos_err_mm;
    rep.mean_ang_err_deg = ar.mean_ang_err_deg;
    rep.mmd_score = mr.score;
    reports.push_back(rep);

    const std::string tag = fmt::format("{}", scale);
    Output acsv((dir / ("accuracy_" + tag + ".csv")).string(), out);
    write_accuracy_csv(acsv.stream(), ar);
    acsv.close();
    Output mcsv((dir / ("mmd_" + tag + ".csv")).string(), out);
    write_mmd_csv(mcsv.stream(), mr);
    mcsv.close();
  }
  if (!counts.empty()) {
    reports.front().runtime_table = runtime_benchmark(b.model, b.chain, counts, a.runtime_repeats,
                                                      stream_seed(g.seed, kBenchStream));
    Output rt((dir / "runtime.csv").string(), out);
    write_runtime_csv(rt.stream(), reports.front().runtime_table);
    rt.close();
  }

  Output sc((dir / "summary.csv").string(), out);
  write_summary_csv(sc.stream(), reports);
  sc.close();
  Output sj((dir / "summary.json").string(), out);
  write_summary_json(sj.stream(), reports);
  sj.close();
  write_summary_csv(out, reports);
  return kOk;
}

int cmd_bench(const BenchArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  if (a.model.empty() && a.chain.empty()) throw UsageError("--model or --chain is required");
  if (a.repeats < 1) throw UsageError("--repeats must be >= 1");
  const std::vector<int> counts = parse_ints(a.counts, "--counts");
  if (counts.empty() || std::any_of(counts.begin(), counts.end(), [](int c) { return c < 0; })) {
    throw UsageError("--counts needs non-negative sample counts");
  }

  std::optional<ModelBundle> b;
  if (!a.model.empty()) {
    b.emplace(open_model(a.model, a.chain));
  } else {
    // Untrained default architecture: same cost per sample as a trained one.
    KinematicChain chain = load_chain(a.chain);
    FlowConfig arch = FlowConfig::defaults_for(chain.name(), static_cast<int>(chain.dof()),
                                               pose_encoding_dim(chain),
                                               chain.task_space() == TaskSpace::planar_xy);
    arch.seed = stream_seed(g.seed, kArchStream);
    b.emplace(ModelBundle{FlowModel(arch), std::move(chain), {}});
  }

  const auto table =
      runtime_benchmark(b->model, b->chain, counts, a.repeats, stream_seed(g.seed, kBenchStream));
  Output o(a.out, out);
  write_runtime_csv(o.stream(), table);
  o.close();
  if (table.size() >= 2) {
    const LinearFit fit = fit_runtime(table);
    fmt::print(err, "fit: ms = {:.4f} + {:.6f} * count; max residual {:.4f} ms ({:.1f}% of mean)\n",
               fit.intercept, fit.slope, fit.max_abs_residual,
               fit.mean > 0 ? 100.0 * fit.max_abs_residual / fit.mean : 0.0);
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging_from_env();

  CLI::App app("Inverse kinematics with conditional normalizing flows", "flowik");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "Help for every command");

  Settings settings;
  Globals g;
  app.add_option("--config", g.config, "JSON config file; flags override its values");
  settings.bind(&app, "--seed", "", "seed", g.seed, "Master random seed");
  settings.bind(&app, "--threads", "", "threads", g.threads, "Worker threads (0 = all cores)");
  app.add_flag("--print-config", g.print_config,
               "Print the resolved settings and their sources, then exit");

  FkArgs fk;
  CLI::App* fk_cmd = app.add_subcommand("fk", "End-effector pose of a joint configuration");
  fk_cmd->add_option("chain", fk.chain, "Bundled chain name or chain file")->required();
  fk_cmd->add_option("values", fk.values, "Joint values")->required();
  fk_cmd->add_flag("--clamp", fk.clamp, "Clamp out-of-limit values instead of failing");

  GenerateArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("generate", "Write a training dataset");
  settings.bind(gen_cmd, "--chain", "generate", "chain", gen.chain, "Chain name or file");
  settings.bind(gen_cmd, "--count", "generate", "count", gen.count, "Number of samples");
  settings.bind(gen_cmd, "--out", "generate", "out", gen.out, "Dataset file");

  TrainArgs tr;
  CLI::App* tr_cmd = app.add_subcommand("train", "Train a flow model on a dataset");
  settings.bind(tr_cmd, "--data", "train", "data", tr.data, "Dataset file");
  settings.bind(tr_cmd, "--chain", "train", "chain", tr.chain,
                "Chain name or file (default: the dataset's chain)");
  settings.bind(tr_cmd, "--out", "train", "out", tr.out, "Checkpoint file");
  settings.bind(tr_cmd, "--log", "train", "log", tr.log, "Training log CSV (default: OUT.log.csv)");
  settings.bind(tr_cmd, "--resume", "train", "resume", tr.resume,
                "Continue from this checkpoint and its .opt sidecar");
  settings.bind(tr_cmd, "--max-batches", "train", "max_batches", tr.max_batches,
                "Batches to train");
  settings.bind(tr_cmd, "--batch-size", "train", "batch_size", tr.batch_size, "Batch size");
  settings.bind(tr_cmd, "--lr", "train", "lr", tr.lr, "Initial learning rate");
  settings.bind(tr_cmd, "--lr-decay", "train", "lr_decay", tr.lr_decay, "Step decay factor");
  settings.bind(tr_cmd, "--decay-interval", "train", "decay_interval_batches", tr.decay_interval,
                "Batches between decay steps");
  settings.bind(tr_cmd, "--softflow-scale", "train", "softflow_scale_max", tr.softflow_scale,
                "Upper bound of the softflow noise magnitude (0 = off)");
  settings.bind(tr_cmd, "--layers", "train", "num_layers", tr.layers, "Coupling layers");
  settings.bind(tr_cmd, "--hidden", "train", "hidden", tr.hidden,
                "Hidden widths of the coefficient nets");
  settings.bind(tr_cmd, "--width", "train", "width", tr.width, "Flow width (0 = chain default)");
  settings.bind(tr_cmd, "--s-clamp", "train", "s_clamp", tr.s_clamp, "Scale soft-clamp bound");
  settings.bind(tr_cmd, "--plateau-window", "train", "plateau_window", tr.plateau_window,
                "Stop when the mean loss improves by less than 0.1% between windows of "
                "this many batches (0 = off)");
  settings.bind(tr_cmd, "--checkpoint-every", "train", "checkpoint_every", tr.checkpoint_every,
                "Also write the checkpoint every N batches");

  SampleArgs sa;
  CLI::App* sa_cmd = app.add_subcommand("sample", "Sample IK solutions for a target pose");
  settings.bind(sa_cmd, "--model", "sample", "model", sa.model, "Checkpoint file");
  settings.bind(sa_cmd, "--chain", "sample", "chain", sa.chain,
                "Chain override (default: stored in the checkpoint)");
  settings.bind(sa_cmd, "--pose", "sample", "pose", sa.pose,
                "Target as 'x,y' (planar) or 'x,y,z,qw,qx,qy,qz'");
  settings.bind(sa_cmd, "--target-joints", "sample", "target_joints", sa.target_joints,
                "Target as the pose reached by these joint values");
  settings.bind(sa_cmd, "--count", "sample", "count", sa.count, "Number of solutions");
  settings.bind(sa_cmd, "--latent-scale", "sample", "latent_scale", sa.latent_scale,
                "Standard deviation of the latent samples");
  settings.bind(sa_cmd, "--out", "sample", "out", sa.out, "Output CSV (- for stdout)");

  RefineArgs rf;
  CLI::App* rf_cmd = app.add_subcommand("refine", "Refine solutions with damped least squares");
  settings.bind(rf_cmd, "--model", "refine", "model", rf.model, "Checkpoint (for its chain)");
  settings.bind(rf_cmd, "--chain", "refine", "chain", rf.chain, "Chain name or file");
  settings.bind(rf_cmd, "--pose", "refine", "pose", rf.pose, "Target pose, as for sample");
  settings.bind(rf_cmd, "--target-joints", "refine", "target_joints", rf.target_joints,
                "Target as the pose reached by these joint values");
  settings.bind(rf_cmd, "--in", "refine", "in", rf.in, "Solution CSV with joint_* columns");
  settings.bind(rf_cmd, "--out", "refine", "out", rf.out, "Output CSV (- for stdout)");
  settings.bind(rf_cmd, "--tolerance", "refine", "tolerance", rf.tolerance,
                "Convergence tolerance (m, rad)");
  settings.bind(rf_cmd, "--max-iterations", "refine", "max_iterations", rf.max_iterations,
                "Iteration cap per seed");

  EvalArgs ev;
  CLI::App* ev_cmd = app.add_subcommand("eval", "Accuracy and coverage report for a model");
  settings.bind(ev_cmd, "--model", "eval", "model", ev.model, "Checkpoint file");
  settings.bind(ev_cmd, "--chain", "eval", "chain", ev.chain, "Chain override");
  settings.bind(ev_cmd, "--scales", "eval", "scales", ev.scales, "Latent scales to evaluate");
  settings.bind(ev_cmd, "--poses", "eval", "poses", ev.poses, "Accuracy poses");
  settings.bind(ev_cmd, "--solutions", "eval", "solutions", ev.solutions,
                "Accuracy solutions per pose");
  settings.bind(ev_cmd, "--mmd-poses", "eval", "mmd_poses", ev.mmd_poses, "Coverage poses");
  settings.bind(ev_cmd, "--mmd-solutions", "eval", "mmd_solutions", ev.mmd_solutions,
                "Coverage solutions per pose");
  settings.bind(ev_cmd, "--runtime-counts", "eval", "runtime_counts", ev.runtime_counts,
                "Sample counts timed for the runtime table (empty = skip)");
  settings.bind(ev_cmd, "--runtime-repeats", "eval", "runtime_repeats", ev.runtime_repeats,
                "Timed calls per count");
  settings.bind(ev_cmd, "--out-dir", "eval", "out_dir", ev.out_dir, "Report directory");

  BenchArgs be;
  CLI::App* be_cmd = app.add_subcommand("bench", "Time batched sampling");
  settings.bind(be_cmd, "--model", "bench", "model", be.model, "Checkpoint file");
  settings.bind(be_cmd, "--chain", "bench", "chain", be.chain,
                "Chain for an untrained default model when no --model is given");
  settings.bind(be_cmd, "--counts", "bench", "counts", be.counts, "Sample counts");
  settings.bind(be_cmd, "--repeats", "bench", "repeats", be.repeats, "Timed calls per count");
  settings.bind(be_cmd, "--out", "bench", "out", be.out, "Runtime CSV (- for stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << "run 'flowik " << (sub == &app ? "" : sub->get_name() + " ") << "--help' for usage\n";
    return kUsage;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    if (!g.config.empty()) settings.load(g.config);
    settings.resolve(active);
    if (g.print_config) {
      settings.print(out, active);
      return kOk;
    }
    if (g.threads < 0) throw UsageError("--threads must be >= 0");
    g.threads = resolve_threads(g.threads);

    if (active == fk_cmd) return cmd_fk(fk, out, err);
    if (active == gen_cmd) return cmd_generate(gen, g, out);
    if (active == tr_cmd) return cmd_train(tr, g, out);
    if (active == sa_cmd) return cmd_sample(sa, g, out);
    if (active == rf_cmd) return cmd_refine(rf, out, err);
    if (active == ev_cmd) return cmd_eval(ev, g, out);
    return cmd_bench(be, g, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kFileFormat;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace flowik::cli
