#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "flowik/kinematics.hpp"

namespace flowik {

/// (joint, pose) training pairs. Column i of `joints` is a configuration and
/// column i of `poses` is the encoded end-effector pose it reaches.
struct Dataset {
  std::string chain_name;
  Eigen::MatrixXd joints;  // dof x N
  Eigen::MatrixXd poses;   // pose_dim x N

  std::size_t size() const { return static_cast<std::size_t>(joints.cols()); }
};

/// 2 for planar chains (x, y); 7 for spatial chains (x, y, z, qw, qx, qy, qz).
int pose_encoding_dim(const KinematicChain& chain);

/// Condition vector for a pose. Quaternions are sign-canonicalized (qw >= 0).
Eigen::VectorXd encode_condition(const KinematicChain& chain, const Pose& pose);

/// Pose described by an encoding. Planar encodings give z = 0 and identity
/// orientation, which task_errors ignores.
Pose decode_condition(const KinematicChain& chain, const Eigen::VectorXd& encoding);

/// N i.i.d. uniform-in-limits configurations and their encoded poses. Rows
/// are generated in fixed-size blocks with per-block generators derived from
/// `seed`, so the result is independent of `threads`.
Dataset generate_dataset(const KinematicChain& chain, std::size_t n,
                         std::uint64_t seed, int threads = 1);

/// Checks name, shapes, joint limits, and that `spot_checks` evenly spaced
/// rows reproduce their stored encodings through forward kinematics to 1e-9.
/// Throws FormatError.
void validate_dataset(const KinematicChain& chain, const Dataset& ds,
                      std::size_t spot_checks = 100);

void save_dataset(const Dataset& ds, const std::string& path);
/// Reads a dataset file. Throws FormatError on bad magic or version and
/// ChecksumError on truncation or corruption.
Dataset load_dataset(const std::string& path);
/// Reads and validates a dataset against `chain`.
Dataset load_dataset(const std::string& path, const KinematicChain& chain);

}  // namespace flowik
