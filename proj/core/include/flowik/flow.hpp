#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "flowik/random.hpp"

namespace flowik {

// Batched quantities are stored one sample per column: a batch of B joint
// vectors of width D is a D x B matrix.

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Fully connected network with leaky-ReLU hidden activations and a linear
/// output layer. Produces the scale and shift coefficients of one coupling
/// layer from its passive half and the condition.
class CoefficientNet {
 public:
  static constexpr double kLeakySlope = 0.01;

  CoefficientNet() = default;
  /// widths = {in, hidden..., out}; all parameters start at zero.
  explicit CoefficientNet(std::vector<int> widths);

  const std::vector<int>& widths() const { return widths_; }
  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;

 private:
  std::vector<int> widths_;
  std::vector<DenseLayer> layers_;
};

/// Affine coupling layer. The first `split` rows pass through; the rest are
/// scaled by exp(s) and shifted by t, where (s, t) come from the coefficient
/// net applied to [passive rows; condition]. The raw scale is soft-clamped
/// to s_clamp * tanh(s_raw / s_clamp).
class CouplingLayer {
 public:
  CouplingLayer() = default;
  CouplingLayer(int width, int cond_dim, const std::vector<int>& hidden,
                double s_clamp);

  int width() const { return width_; }
  int split() const { return split_; }
  int active() const { return width_ - split_; }
  int cond_dim() const { return cond_dim_; }
  double s_clamp() const { return s_clamp_; }
  CoefficientNet& net() { return net_; }
  const CoefficientNet& net() const { return net_; }

  struct Coefficients {
    Eigen::MatrixXd s_raw;  // active x B, before clamping
    Eigen::MatrixXd s;      // active x B, clamped
    Eigen::MatrixXd t;      // active x B
  };
  Coefficients coefficients(const Eigen::MatrixXd& passive,
                            const Eigen::MatrixXd& cond) const;

  struct Output {
    Eigen::MatrixXd y;
    Eigen::VectorXd logdet;  // per column: sum of s
  };
  /// Data-to-latent direction.
  Output forward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cond) const;
  /// Latent-to-data direction; exact algebraic inverse of forward.
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& y,
                          const Eigen::MatrixXd& cond) const;

 private:
  int width_ = 0;
  int split_ = 0;
  int cond_dim_ = 0;
  double s_clamp_ = 2.0;
  CoefficientNet net_;
};

/// Fixed row permutation: apply(x).row(i) == x.row(map[i]).
class Permutation {
 public:
  Permutation() = default;
  static Permutation identity(int n);
  /// Uniform random bijection drawn from `seed`.
  static Permutation random(int n, std::uint64_t seed);
  static Permutation from_map(std::vector<int> map, std::uint64_t seed = 0);

  const std::vector<int>& map() const { return map_; }
  const std::vector<int>& inverse_map() const { return inverse_; }
  std::uint64_t seed() const { return seed_; }
  int size() const { return static_cast<int>(map_.size()); }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd revert(const Eigen::MatrixXd& y) const;

 private:
  std::vector<int> map_;
  std::vector<int> inverse_;
  std::uint64_t seed_ = 0;
};

struct FlowConfig {
  std::string chain_name;
  int dof = 1;
  int width = 2;     // D; latent dimension equals D
  int cond_dim = 1;  // pose encoding + 1 noise-scale slot (always last)
  int num_layers = 6;
  std::vector<int> hidden = {1024, 1024, 1024};
  double s_clamp = 2.0;
  std::uint64_t seed = 0;  // weight init and permutation seeds

  /// Architecture defaults for a chain: width dof+1 for planar chains,
  /// dof+2 for spatial ones; 6 layers of 3x128 nets.
  static FlowConfig defaults_for(const std::string& chain_name, int dof,
                                 int pose_dim, bool planar);
};

/// Conditional normalizing flow: a stack of (permutation, coupling layer)
/// pairs. In the data-to-latent direction each step permutes rows and then
/// applies the coupling forward transform.
class FlowModel {
 public:
  FlowModel() = default;
  /// Builds the architecture. Hidden layers get fan-in scaled uniform
  /// weights, output layers and biases are zero, so a fresh model is the
  /// identity map up to permutations.
  explicit FlowModel(const FlowConfig& config);

  const FlowConfig& config() const { return config_; }
  int width() const { return config_.width; }
  int cond_dim() const { return config_.cond_dim; }
  int dof() const { return config_.dof; }
  std::size_t num_layers() const { return couplings_.size(); }
  std::size_t parameter_count() const;

  CouplingLayer& coupling(std::size_t i) { return couplings_.at(i); }
  const CouplingLayer& coupling(std::size_t i) const { return couplings_.at(i); }
  Permutation& permutation(std::size_t i) { return permutations_.at(i); }
  const Permutation& permutation(std::size_t i) const { return permutations_.at(i); }

  /// Zeroes every coefficient-net parameter (identity couplings).
  void zero_parameters();
  /// Draws every parameter, output layers included, uniformly from
  /// [-scale/sqrt(fan_in), scale/sqrt(fan_in)]. Used to get a non-trivial
  /// untrained map in tests.
  void randomize_parameters(Rng& rng, double scale = 1.0);

 private:
  FlowConfig config_;
  std::vector<CouplingLayer> couplings_;
  std::vector<Permutation> permutations_;
};

struct LatentResult {
  Eigen::MatrixXd z;
  Eigen::VectorXd logdet;  // total log|det dz/dx| per column
};

LatentResult flow_to_latent(const FlowModel& model, const Eigen::MatrixXd& x,
                            const Eigen::MatrixXd& cond);
Eigen::MatrixXd flow_from_latent(const FlowModel& model,
                                 const Eigen::MatrixXd& z,
                                 const Eigen::MatrixXd& cond);

/// log N(z; 0, I) + log|det dz/dx| per column.
Eigen::VectorXd log_prob(const FlowModel& model, const Eigen::MatrixXd& x,
                         const Eigen::MatrixXd& cond);

/// log N(z; 0, I) per column.
Eigen::VectorXd standard_normal_log_density(const Eigen::MatrixXd& z);

/// Condition column for a pose encoding at inference time: the noise-scale
/// slot is 0.
Eigen::VectorXd inference_condition(const FlowModel& model,
                                    const Eigen::VectorXd& pose_encoding);

/// Draws `count` joint vectors for one pose: z ~ N(0, latent_scale^2 I),
/// pushed through the inverse flow and truncated to the first dof entries.
/// Returns count x dof (one solution per row). Values are raw, not clamped
/// to joint limits.
Eigen::MatrixXd sample_solutions(const FlowModel& model,
                                 const Eigen::VectorXd& pose_encoding,
                                 int count, double latent_scale, Rng& rng);

}  // namespace flowik
