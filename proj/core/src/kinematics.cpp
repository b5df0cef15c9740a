#include "flowik/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "flowik/errors.hpp"

namespace flowik {

namespace {

void check_dof(const KinematicChain& chain, const JointVector& q) {
  if (static_cast<std::size_t>(q.size()) != chain.dof()) {
    throw DimensionError("joint vector has " + std::to_string(q.size()) +
                         " entries, chain '" + chain.name() + "' has dof " +
                         std::to_string(chain.dof()));
  }
}

// Task-space error vector and Jacobian rows matching it.
struct TaskResidual {
  Eigen::VectorXd error;
  Eigen::MatrixXd jac;
};

TaskResidual task_residual(const KinematicChain& chain, const Pose& target,
                           const JointVector& q) {
  const Pose achieved = forward_kinematics(chain, q);
  const Jacobian full = jacobian(chain, q);
  TaskResidual r;
  if (chain.task_space() == TaskSpace::planar_xy) {
    r.error = (target.position - achieved.position).head<2>();
    r.jac = full.topRows<2>();
  } else {
    r.error.resize(6);
    r.error.head<3>() = target.position - achieved.position;
    r.error.tail<3>() =
        rotation_error(target.orientation, achieved.orientation);
    r.jac = full;
  }
  return r;
}

bool within_tolerance(const PoseError& e, double tol) {
  return e.position <= tol && e.angular <= tol;
}

}  // namespace

RigidTransform Joint::motion(double q) const {
  RigidTransform m;
  if (kind == JointKind::revolute) {
    m.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(q, axis));
  } else {
    m.translation = q * axis;
  }
  return m;
}

KinematicChain::KinematicChain(std::string name, std::vector<Joint> joints,
                               RigidTransform tip, TaskSpace task_space)
    : name_(std::move(name)),
      joints_(std::move(joints)),
      tip_(std::move(tip)),
      task_space_(task_space) {
  if (joints_.empty()) {
    throw FormatError("chain '" + name_ + "' has no joints");
  }
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const Joint& j = joints_[i];
    const std::string where = "chain '" + name_ + "' joint " + std::to_string(i);
    if (!j.axis.allFinite() || std::abs(j.axis.norm() - 1.0) > 1e-12) {
      throw FormatError(where + ": axis is not unit length");
    }
    if (!std::isfinite(j.lower) || !std::isfinite(j.upper) ||
        !(j.lower < j.upper)) {
      throw FormatError(where + ": limits must be finite with lower < upper");
    }
    if (std::abs(j.offset.rotation.norm() - 1.0) > 1e-9) {
      throw FormatError(where + ": offset rotation is not a unit quaternion");
    }
  }
}

Eigen::VectorXd KinematicChain::lower_limits() const {
  Eigen::VectorXd v(dof());
  for (std::size_t i = 0; i < dof(); ++i) v[i] = joints_[i].lower;
  return v;
}

Eigen::VectorXd KinematicChain::upper_limits() const {
  Eigen::VectorXd v(dof());
  for (std::size_t i = 0; i < dof(); ++i) v[i] = joints_[i].upper;
  return v;
}

Eigen::Quaterniond canonical(const Eigen::Quaterniond& q) {
  Eigen::Quaterniond n = q.normalized();
  if (n.w() < 0.0) n.coeffs() = -n.coeffs();
  return n;
}

Pose Pose::from_transform(const RigidTransform& t) {
  return {t.translation, canonical(t.rotation)};
}

Pose forward_kinematics(const KinematicChain& chain, const JointVector& q) {
  check_dof(chain, q);
  RigidTransform frame;
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const Joint& j = chain.joint(i);
    frame = frame * j.offset * j.motion(q[static_cast<Eigen::Index>(i)]);
  }
  return Pose::from_transform(frame * chain.tip());
}

Jacobian jacobian(const KinematicChain& chain, const JointVector& q) {
  check_dof(chain, q);
  const auto n = static_cast<Eigen::Index>(chain.dof());
  Eigen::Matrix3Xd axes(3, n);
  Eigen::Matrix3Xd origins(3, n);

  RigidTransform frame;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Joint& j = chain.joint(static_cast<std::size_t>(i));
    frame = frame * j.offset;
    axes.col(i) = frame.rotation * j.axis;
    origins.col(i) = frame.translation;
    frame = frame * j.motion(q[i]);
  }
  const Eigen::Vector3d end = (frame * chain.tip()).translation;

  Jacobian jac(6, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d z = axes.col(i);
    if (chain.joint(static_cast<std::size_t>(i)).kind == JointKind::revolute) {
      jac.col(i).head<3>() = z.cross(end - origins.col(i));
      jac.col(i).tail<3>() = z;
    } else {
      jac.col(i).head<3>() = z;
      jac.col(i).tail<3>().setZero();
    }
  }
  return jac;
}

PoseError pose_errors(const Pose& target, const Pose& achieved) {
  const double dot = target.orientation.w() * achieved.orientation.w() +
                     target.orientation.x() * achieved.orientation.x() +
                     target.orientation.y() * achieved.orientation.y() +
                     target.orientation.z() * achieved.orientation.z();
  return {(target.position - achieved.position).norm(),
          2.0 * std::acos(std::min(1.0, std::abs(dot)))};
}

PoseError task_errors(const KinematicChain& chain, const Pose& target,
                      const Pose& achieved) {
  if (chain.task_space() == TaskSpace::planar_xy) {
    return {(target.position - achieved.position).head<2>().norm(), 0.0};
  }
  return pose_errors(target, achieved);
}

Eigen::Vector3d rotation_error(const Eigen::Quaterniond& to,
                               const Eigen::Quaterniond& from) {
  Eigen::Quaterniond delta = canonical(to * from.conjugate());
  const Eigen::Vector3d v = delta.vec();
  const double sin_half = v.norm();
  if (sin_half < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(sin_half, delta.w());
  return v * (angle / sin_half);
}

bool within_limits(const KinematicChain& chain, const JointVector& q) {
  check_dof(chain, q);
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const double v = q[static_cast<Eigen::Index>(i)];
    if (!(v >= chain.joint(i).lower && v <= chain.joint(i).upper)) return false;
  }
  return true;
}

JointVector clamp_to_limits(const KinematicChain& chain, const JointVector& q) {
  check_dof(chain, q);
  return q.cwiseMax(chain.lower_limits()).cwiseMin(chain.upper_limits());
}

JointVector sample_uniform_config(const KinematicChain& chain, Rng& rng) {
  JointVector q(static_cast<Eigen::Index>(chain.dof()));
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    std::uniform_real_distribution<double> u(chain.joint(i).lower,
                                             chain.joint(i).upper);
    q[static_cast<Eigen::Index>(i)] = u(rng);
  }
  return q;
}

double sum_joint_limit_ranges(const KinematicChain& chain) {
  double sum = 0.0;
  for (const Joint& j : chain.joints()) sum += j.range();
  return sum;
}

KinematicChain scale_revolute_ranges(const KinematicChain& chain,
                                     double factor) {
  std::vector<Joint> joints = chain.joints();
  for (Joint& j : joints) {
    if (j.kind != JointKind::revolute) continue;
    const double center = 0.5 * (j.lower + j.upper);
    const double half = 0.5 * j.range() * factor;
    j.lower = center - half;
    j.upper = center + half;
  }
  return KinematicChain(chain.name(), std::move(joints), chain.tip(),
                        chain.task_space());
}

RefineResult dls_refine(const KinematicChain& chain, const Pose& target,
                        const JointVector& seed,
                        const RefineOptions& options) {
  check_dof(chain, seed);
  RefineResult result;
  result.q = clamp_to_limits(chain, seed);

  const double lambda2 = options.damping * options.damping;
  for (;;) {
    const PoseError err =
        task_errors(chain, target, forward_kinematics(chain, result.q));
    if (within_tolerance(err, options.tolerance)) {
      result.converged = true;
      return result;
    }
    if (result.iterations >= options.max_iterations) return result;

    const TaskResidual r = task_residual(chain, target, result.q);
    Eigen::MatrixXd jjt = r.jac * r.jac.transpose();
    jjt.diagonal().array() += lambda2;
    const Eigen::VectorXd step =
        r.jac.transpose() * jjt.ldlt().solve(r.error);
    result.q = clamp_to_limits(chain, result.q + step);
    ++result.iterations;
  }
}

std::vector<JointVector> ground_truth_solutions(
    const KinematicChain& chain, const Pose& target, std::size_t count,
    Rng& rng, const GroundTruthOptions& options) {
  std::vector<JointVector> solutions;
  if (count == 0) return solutions;
  solutions.reserve(count);
  const std::size_t budget =
      count * static_cast<std::size_t>(std::max(1, options.attempts_per_solution));
  for (std::size_t attempt = 0; attempt < budget && solutions.size() < count;
       ++attempt) {
    const JointVector seed = sample_uniform_config(chain, rng);
    RefineResult r = dls_refine(chain, target, seed, options.refine);
    if (!r.converged) continue;
    const bool duplicate =
        std::any_of(solutions.begin(), solutions.end(), [&](const auto& s) {
          return (s - r.q).norm() < options.dedup_distance;
        });
    if (!duplicate) solutions.push_back(std::move(r.q));
  }
  return solutions;
}

}  // namespace flowik
