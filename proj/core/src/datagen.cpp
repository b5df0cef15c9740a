#include "flowik/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "binary_io.hpp"
#include "flowik/errors.hpp"

namespace flowik {

namespace {

constexpr std::array<char, 8> kMagic = {'F', 'L', 'O', 'W', 'I', 'K', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kBlockRows = 4096;

}  // namespace

int pose_encoding_dim(const KinematicChain& chain) {
  return chain.task_space() == TaskSpace::planar_xy ? 2 : 7;
}

Eigen::VectorXd encode_condition(const KinematicChain& chain, const Pose& pose) {
  if (chain.task_space() == TaskSpace::planar_xy) {
    return pose.position.head<2>();
  }
  const Eigen::Quaterniond q = canonical(pose.orientation);
  Eigen::VectorXd enc(7);
  enc << pose.position, q.w(), q.x(), q.y(), q.z();
  return enc;
}

Pose decode_condition(const KinematicChain& chain, const Eigen::VectorXd& enc) {
  if (enc.size() != pose_encoding_dim(chain)) {
    throw DimensionError("pose encoding for chain '" + chain.name() + "' needs " +
                         std::to_string(pose_encoding_dim(chain)) + " values, got " +
                         std::to_string(enc.size()));
  }
  Pose p;
  if (chain.task_space() == TaskSpace::planar_xy) {
    p.position << enc[0], enc[1], 0.0;
    return p;
  }
  p.position = enc.head<3>();
  const Eigen::Quaterniond q(enc[3], enc[4], enc[5], enc[6]);
  if (!(q.norm() > 0.0)) throw DimensionError("pose quaternion is zero");
  p.orientation = canonical(q);
  return p;
}

Dataset generate_dataset(const KinematicChain& chain, std::size_t n,
                         std::uint64_t seed, int threads) {
  Dataset ds;
  ds.chain_name = chain.name();
  const auto dof = static_cast<Eigen::Index>(chain.dof());
  const auto cols = static_cast<Eigen::Index>(n);
  ds.joints.resize(dof, cols);
  ds.poses.resize(pose_encoding_dim(chain), cols);

  const std::size_t blocks = (n + kBlockRows - 1) / kBlockRows;
  parallel_for(blocks, threads, [&](std::size_t b) {
    Rng rng = make_stream(seed, b);
    const std::size_t end = std::min(n, (b + 1) * kBlockRows);
    for (std::size_t i = b * kBlockRows; i < end; ++i) {
      const JointVector q = sample_uniform_config(chain, rng);
      const auto c = static_cast<Eigen::Index>(i);
      ds.joints.col(c) = q;
      ds.poses.col(c) = encode_condition(chain, forward_kinematics(chain, q));
    }
  });
  return ds;
}

void validate_dataset(const KinematicChain& chain, const Dataset& ds,
                      std::size_t spot_checks) {
  if (ds.chain_name != chain.name()) {
    throw FormatError("dataset is for chain '" + ds.chain_name +
                      "', expected '" + chain.name() + "'");
  }
  if (static_cast<std::size_t>(ds.joints.rows()) != chain.dof() ||
      ds.poses.rows() != pose_encoding_dim(chain) ||
      ds.poses.cols() != ds.joints.cols()) {
    throw FormatError("dataset shape does not match chain '" + chain.name() + "'");
  }
  const Eigen::VectorXd lo = chain.lower_limits();
  const Eigen::VectorXd hi = chain.upper_limits();
  for (Eigen::Index i = 0; i < ds.joints.cols(); ++i) {
    const auto q = ds.joints.col(i);
    if (!((q.array() >= lo.array()).all() && (q.array() <= hi.array()).all())) {
      throw FormatError("dataset row " + std::to_string(i) + " violates joint limits");
    }
  }
  const std::size_t n = ds.size();
  const std::size_t checks = std::min(spot_checks, n);
  for (std::size_t k = 0; k < checks; ++k) {
    const auto i = static_cast<Eigen::Index>(k * n / checks);
    const Eigen::VectorXd enc =
        encode_condition(chain, forward_kinematics(chain, ds.joints.col(i)));
    if ((enc - ds.poses.col(i)).cwiseAbs().maxCoeff() > 1e-9) {
      throw FormatError("dataset row " + std::to_string(i) +
                        " pose does not match forward kinematics");
    }
  }
}

void save_dataset(const Dataset& ds, const std::string& path) {
  // Matrices are stored row-major (one sample per row), i.e. exactly the
  // column-major bytes of the dof x N / pose_dim x N matrices.
  const std::size_t joint_bytes = static_cast<std::size_t>(ds.joints.size()) * sizeof(double);
  const std::size_t pose_bytes = static_cast<std::size_t>(ds.poses.size()) * sizeof(double);
  std::vector<char> payload(joint_bytes + pose_bytes);
  if (joint_bytes) std::memcpy(payload.data(), ds.joints.data(), joint_bytes);
  if (pose_bytes) std::memcpy(payload.data() + joint_bytes, ds.poses.data(), pose_bytes);

  detail::ByteWriter w;
  w.put_bytes(kMagic.data(), kMagic.size());
  w.put(kVersion);
  w.put_string(ds.chain_name);
  w.put(static_cast<std::uint64_t>(ds.size()));
  w.put(static_cast<std::uint32_t>(ds.joints.rows()));
  w.put(static_cast<std::uint32_t>(ds.poses.rows()));
  w.put(detail::crc32(payload.data(), payload.size()));
  w.put_bytes(payload.data(), payload.size());
  detail::write_file(path, w.bytes());
}

Dataset load_dataset(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  const char* magic = r.take(kMagic.size());
  if (!std::equal(kMagic.begin(), kMagic.end(), magic)) {
    throw FormatError(path + ": not a dataset file");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError(path + ": unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  ds.chain_name = r.get_string(4096);
  const auto n = r.get<std::uint64_t>();
  const auto dof = r.get<std::uint32_t>();
  const auto pose_dim = r.get<std::uint32_t>();
  const auto crc = r.get<std::uint32_t>();
  if (dof == 0 || pose_dim == 0 || dof > 1024 || pose_dim > 1024) {
    throw FormatError(path + ": implausible dataset shape");
  }
  const std::size_t expected = static_cast<std::size_t>(n) * (dof + pose_dim) * sizeof(double);
  if (r.remaining() != expected) {
    throw ChecksumError(path + ": payload size does not match header (truncated?)");
  }
  const char* payload = r.take(expected);
  if (detail::crc32(payload, expected) != crc) {
    throw ChecksumError(path + ": checksum mismatch");
  }
  ds.joints.resize(dof, static_cast<Eigen::Index>(n));
  ds.poses.resize(pose_dim, static_cast<Eigen::Index>(n));
  const std::size_t joint_bytes = static_cast<std::size_t>(ds.joints.size()) * sizeof(double);
  if (joint_bytes) std::memcpy(ds.joints.data(), payload, joint_bytes);
  if (ds.poses.size()) {
    std::memcpy(ds.poses.data(), payload + joint_bytes,
                static_cast<std::size_t>(ds.poses.size()) * sizeof(double));
  }
  return ds;
}

Dataset load_dataset(const std::string& path, const KinematicChain& chain) {
  Dataset ds = load_dataset(path);
  validate_dataset(chain, ds);
  return ds;
}

}  // namespace flowik
