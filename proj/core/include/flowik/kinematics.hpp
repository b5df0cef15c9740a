#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cstddef>
#include <string>
#include <vector>

#include "flowik/random.hpp"

namespace flowik {

using JointVector = Eigen::VectorXd;
using Jacobian = Eigen::Matrix<double, 6, Eigen::Dynamic>;

/// Rigid transform stored as translation + unit quaternion.
struct RigidTransform {
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();

  RigidTransform operator*(const RigidTransform& rhs) const {
    return {translation + rotation * rhs.translation,
            (rotation * rhs.rotation).normalized()};
  }
};

enum class JointKind { revolute, prismatic };

struct Joint {
  JointKind kind = JointKind::revolute;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  /// Fixed transform from the parent frame to this joint's frame.
  RigidTransform offset;
  double lower = 0.0;
  double upper = 0.0;

  /// Motion of the joint frame at joint value q (rotation about or
  /// translation along `axis`).
  RigidTransform motion(double q) const;
  double range() const { return upper - lower; }
};

/// Which part of the end-effector pose the chain is asked to reach. Planar
/// chains are solved and conditioned on the (x, y) position only.
enum class TaskSpace { spatial, planar_xy };

/// Ordered serial chain. Immutable after construction; the constructor
/// enforces unit axes, finite limits with lower < upper, and dof >= 1.
class KinematicChain {
 public:
  KinematicChain(std::string name, std::vector<Joint> joints,
                 RigidTransform tip = {},
                 TaskSpace task_space = TaskSpace::spatial);

  const std::string& name() const { return name_; }
  const std::vector<Joint>& joints() const { return joints_; }
  const Joint& joint(std::size_t i) const { return joints_.at(i); }
  std::size_t dof() const { return joints_.size(); }
  /// Fixed transform from the last joint frame to the end effector.
  const RigidTransform& tip() const { return tip_; }
  TaskSpace task_space() const { return task_space_; }
  /// Number of task-space coordinates: 2 for planar, 6 for spatial.
  int task_dim() const { return task_space_ == TaskSpace::planar_xy ? 2 : 6; }

  Eigen::VectorXd lower_limits() const;
  Eigen::VectorXd upper_limits() const;

 private:
  std::string name_;
  std::vector<Joint> joints_;
  RigidTransform tip_;
  TaskSpace task_space_;
};

/// End-effector pose. Orientation is kept canonical (w >= 0).
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  static Pose from_transform(const RigidTransform& t);
};

Eigen::Quaterniond canonical(const Eigen::Quaterniond& q);

/// Pose of the end effector. Throws DimensionError if q.size() != dof.
Pose forward_kinematics(const KinematicChain& chain, const JointVector& q);

/// Geometric Jacobian (rows 0..2 linear, 3..5 angular, world frame).
Jacobian jacobian(const KinematicChain& chain, const JointVector& q);

struct PoseError {
  double position = 0.0;  // meters
  double angular = 0.0;   // radians
};

/// Euclidean position distance and geodesic rotation angle. Symmetric in its
/// arguments and invariant to quaternion sign.
PoseError pose_errors(const Pose& target, const Pose& achieved);

/// Errors restricted to the chain's task space. Planar chains measure the
/// (x, y) distance and report zero angular error.
PoseError task_errors(const KinematicChain& chain, const Pose& target,
                      const Pose& achieved);

/// Rotation vector (angle * axis) taking `from` to `to`, in the world frame.
Eigen::Vector3d rotation_error(const Eigen::Quaterniond& to,
                               const Eigen::Quaterniond& from);

bool within_limits(const KinematicChain& chain, const JointVector& q);
JointVector clamp_to_limits(const KinematicChain& chain, const JointVector& q);
JointVector sample_uniform_config(const KinematicChain& chain, Rng& rng);

double sum_joint_limit_ranges(const KinematicChain& chain);

/// Same chain with every revolute range scaled by `factor` about its center.
KinematicChain scale_revolute_ranges(const KinematicChain& chain,
                                     double factor);

struct RefineOptions {
  double tolerance = 1e-6;  // meters; radians for the angular part
  int max_iterations = 100;
  double damping = 1e-3;
};

struct RefineResult {
  JointVector q;
  int iterations = 0;
  bool converged = false;
};

/// Damped least squares refinement from `seed`. The seed is clamped into the
/// joint limits first; every iterate is clamped after its update. On success
/// q is within limits and task_errors(target, fk(q)) is within tolerance.
RefineResult dls_refine(const KinematicChain& chain, const Pose& target,
                        const JointVector& seed,
                        const RefineOptions& options = {});

struct GroundTruthOptions {
  RefineOptions refine;
  /// Refinement attempts allowed per requested solution.
  int attempts_per_solution = 10;
  /// Joint-space distance under which two solutions count as the same.
  double dedup_distance = 1e-6;
};

/// Solutions of `target` found by refining i.i.d. uniform-in-limits seeds.
/// Returns at most `count` distinct converged solutions; fewer when the
/// attempt budget runs out.
std::vector<JointVector> ground_truth_solutions(
    const KinematicChain& chain, const Pose& target, std::size_t count,
    Rng& rng, const GroundTruthOptions& options = {});

}  // namespace flowik
