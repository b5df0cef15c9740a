#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "flowik/chain_io.hpp"
#include "flowik/checkpoint.hpp"
#include "flowik/datagen.hpp"
#include "flowik/errors.hpp"

using namespace flowik;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("flowik_test_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void truncate_file(const std::string& path, std::uintmax_t drop) {
  fs::resize_file(path, fs::file_size(path) - drop);
}

void flip_last_byte(const std::string& path) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(-1, std::ios::end);
  char c = 0;
  f.get(c);
  f.seekp(-1, std::ios::end);
  f.put(static_cast<char>(c ^ 0x5a));
}

bool same_parameters(const FlowModel& a, const FlowModel& b) {
  const auto pa = parameter_blocks(a);
  const auto pb = parameter_blocks(b);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].size() != pb[i].size() ||
        std::memcmp(pa[i].data(), pb[i].data(), pa[i].size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("condition encoding") {
  const KinematicChain arm = load_chain("arm7");
  const KinematicChain rail = load_chain("raily_chain3");
  CHECK(pose_encoding_dim(arm) == 7);
  CHECK(pose_encoding_dim(rail) == 2);

  Eigen::VectorXd expected(7);
  expected << 0, 0, 0, 1, 0, 0, 0;
  CHECK(encode_condition(arm, Pose{}) == expected);

  Pose p;
  p.position = Eigen::Vector3d(0.1, 0.2, 0.3);
  p.orientation = Eigen::Quaterniond(-0.5, 0.5, -0.5, 0.5);
  Pose n = p;
  n.orientation.coeffs() *= -1.0;
  CHECK(encode_condition(arm, p) == encode_condition(arm, n));
  CHECK(encode_condition(arm, p)[3] >= 0.0);

  const Eigen::VectorXd e = encode_condition(rail, forward_kinematics(rail, Eigen::Vector4d::Zero()));
  REQUIRE(e.size() == 2);
  CHECK(e[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(std::abs(e[1]) < 1e-15);

  const Pose back = decode_condition(arm, encode_condition(arm, p));
  CHECK(pose_errors(back, p).position < 1e-15);
  CHECK(pose_errors(back, p).angular < 1e-7);
  CHECK_THROWS_AS(decode_condition(arm, Eigen::Vector2d::Zero()), DimensionError);
}

TEST_CASE("dataset generation") {
  const KinematicChain chain = load_chain("raily_chain3");

  const Dataset empty = generate_dataset(chain, 0, 1);
  CHECK(empty.size() == 0);
  CHECK(empty.joints.rows() == 4);
  CHECK_NOTHROW(validate_dataset(chain, empty));

  const std::size_t n = 100000;
  const Dataset ds = generate_dataset(chain, n, 42);
  REQUIRE(ds.size() == n);
  CHECK(ds.chain_name == "raily_chain3");
  CHECK_NOTHROW(validate_dataset(chain, ds, n));

  for (std::size_t j = 0; j < chain.dof(); ++j) {
    CAPTURE(j);
    const Joint& joint = chain.joint(j);
    const auto row = ds.joints.row(static_cast<Eigen::Index>(j));

    // Mean within 3 standard errors of the uniform mean.
    const double se = joint.range() / std::sqrt(12.0 * static_cast<double>(n));
    CHECK(std::abs(row.mean() - 0.5 * (joint.lower + joint.upper)) < 3 * se);

    // Kolmogorov-Smirnov against the uniform CDF; alpha = 0.01 critical
    // value 1.628 / sqrt(n).
    std::vector<double> v(row.begin(), row.end());
    std::sort(v.begin(), v.end());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double cdf = (v[i] - joint.lower) / joint.range();
      d = std::max({d, static_cast<double>(i + 1) / static_cast<double>(n) - cdf,
                    cdf - static_cast<double>(i) / static_cast<double>(n)});
    }
    CHECK(d < 1.628 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("dataset generation is independent of thread count") {
  const KinematicChain chain = load_chain("arm7");
  const Dataset a = generate_dataset(chain, 10000, 3, 1);
  const Dataset b = generate_dataset(chain, 10000, 3, 4);
  CHECK(a.joints == b.joints);
  CHECK(a.poses == b.poses);
  CHECK(generate_dataset(chain, 10000, 4, 1).joints != a.joints);
  // A prefix of a larger dataset is the smaller dataset.
  CHECK(generate_dataset(chain, 5000, 3).joints == a.joints.leftCols(5000));
}

TEST_CASE("dataset validation catches corruption") {
  const KinematicChain chain = load_chain("raily_chain3");
  Dataset ds = generate_dataset(chain, 500, 1);
  CHECK_THROWS_AS(validate_dataset(load_chain("arm7"), ds), FormatError);

  Dataset limits = ds;
  limits.joints(0, 17) = 1.5;
  CHECK_THROWS_AS(validate_dataset(chain, limits), FormatError);

  Dataset pose = ds;
  pose.poses(1, 0) += 1e-6;
  CHECK_THROWS_AS(validate_dataset(chain, pose), FormatError);

  Dataset shape = ds;
  shape.poses.conservativeResize(2, 499);
  CHECK_THROWS_AS(validate_dataset(chain, shape), FormatError);
}

TEST_CASE("dataset files") {
  TempDir dir;
  const KinematicChain chain = load_chain("arm7");
  const Dataset ds = generate_dataset(chain, 3000, 9);
  const std::string path = dir.file("a.ds");
  save_dataset(ds, path);

  const Dataset back = load_dataset(path, chain);
  CHECK(back.chain_name == ds.chain_name);
  REQUIRE(back.joints.rows() == ds.joints.rows());
  REQUIRE(back.joints.cols() == ds.joints.cols());
  CHECK(std::memcmp(back.joints.data(), ds.joints.data(), sizeof(double) * ds.joints.size()) == 0);
  CHECK(std::memcmp(back.poses.data(), ds.poses.data(), sizeof(double) * ds.poses.size()) == 0);

  CHECK_THROWS_AS(load_dataset(path, load_chain("raily_chain3")), FormatError);

  const std::string cut = dir.file("cut.ds");
  fs::copy_file(path, cut);
  truncate_file(cut, 8);
  CHECK_THROWS_AS(load_dataset(cut), ChecksumError);
  truncate_file(cut, fs::file_size(cut) - 10);
  CHECK_THROWS_AS(load_dataset(cut), ChecksumError);

  const std::string flipped = dir.file("flip.ds");
  fs::copy_file(path, flipped);
  flip_last_byte(flipped);
  CHECK_THROWS_AS(load_dataset(flipped), ChecksumError);

  {
    std::ofstream junk(dir.file("junk.ds"), std::ios::binary);
    junk << "NOTADATASETFILE-----------------";
  }
  CHECK_THROWS_AS(load_dataset(dir.file("junk.ds")), FormatError);
  CHECK_THROWS_AS(load_dataset(dir.file("missing.ds")), FormatError);

  const Dataset none = generate_dataset(chain, 0, 1);
  save_dataset(none, dir.file("empty.ds"));
  CHECK(load_dataset(dir.file("empty.ds")).size() == 0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir dir;
  FlowConfig cfg = FlowConfig::defaults_for("arm7", 7, 7, false);
  cfg.hidden = {16, 24};
  cfg.seed = 77;
  FlowModel m(cfg);
  Rng rng(1);
  m.randomize_parameters(rng, 1.0);

  CheckpointInfo info;
  info.chain_document = serialize_chain(load_chain("arm7"));
  info.training["batches"] = "12";
  const std::string path = dir.file("m.ckpt");
  save_checkpoint(m, path, info);

  const LoadedCheckpoint lc = load_checkpoint(path);
  CHECK(same_parameters(lc.model, m));
  CHECK(lc.model.config().chain_name == "arm7");
  CHECK(lc.model.config().hidden == cfg.hidden);
  CHECK(lc.model.config().s_clamp == cfg.s_clamp);
  CHECK(lc.info.chain_document == info.chain_document);
  CHECK(lc.info.training.at("batches") == "12");
  for (std::size_t k = 0; k < m.num_layers(); ++k) {
    CHECK(lc.model.permutation(k).map() == m.permutation(k).map());
    CHECK(lc.model.permutation(k).seed() == m.permutation(k).seed());
  }

  // Saving the loaded model reproduces the file byte for byte.
  save_checkpoint(lc.model, dir.file("again.ckpt"), lc.info);
  std::ifstream f1(path, std::ios::binary), f2(dir.file("again.ckpt"), std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {});
  const std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);

  const std::string cut = dir.file("cut.ckpt");
  fs::copy_file(path, cut);
  truncate_file(cut, 3);
  CHECK_THROWS_AS(load_checkpoint(cut), ChecksumError);
  const std::string flipped = dir.file("flip.ckpt");
  fs::copy_file(path, flipped);
  flip_last_byte(flipped);
  CHECK_THROWS_AS(load_checkpoint(flipped), ChecksumError);
  CHECK_THROWS_AS(load_checkpoint(dir.file("nope.ckpt")), FormatError);
}

TEST_CASE("optimizer sidecar round trip") {
  TempDir dir;
  FlowConfig cfg = FlowConfig::defaults_for("raily_chain3", 4, 2, true);
  cfg.hidden = {8};
  FlowModel m(cfg);
  TrainConfig tc;
  TrainState st = TrainState::initial(m, tc);
  Rng rng(2);
  std::normal_distribution<double> n;
  for (auto& v : st.first_moment) for (auto& x : v) x = n(rng);
  for (auto& v : st.second_moment) for (auto& x : v) x = std::abs(n(rng));
  st.batch_counter = 123;
  st.adam_steps = 120;
  st.skipped_steps = 3;
  st.current_lr = scheduled_lr(tc, 123);

  save_optimizer_state(st, dir.file("m.opt"));
  const TrainState back = load_optimizer_state(dir.file("m.opt"), m);
  CHECK(back.batch_counter == 123);
  CHECK(back.adam_steps == 120);
  CHECK(back.skipped_steps == 3);
  CHECK(back.current_lr == st.current_lr);
  REQUIRE(back.first_moment.size() == st.first_moment.size());
  for (std::size_t i = 0; i < st.first_moment.size(); ++i) {
    CHECK(back.first_moment[i] == st.first_moment[i]);
    CHECK(back.second_moment[i] == st.second_moment[i]);
  }

  cfg.hidden = {9};
  CHECK_THROWS_AS(load_optimizer_state(dir.file("m.opt"), FlowModel(cfg)), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir.file("m.opt")), FormatError);
}
