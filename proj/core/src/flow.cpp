#include "flowik/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "flowik/errors.hpp"

namespace flowik {

namespace {

void check_batch(const Eigen::MatrixXd& x, int rows, const Eigen::MatrixXd& cond,
                 int cond_rows, const char* what) {
  if (x.rows() != rows || cond.rows() != cond_rows || x.cols() != cond.cols()) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(rows) +
                         "xB input and " + std::to_string(cond_rows) +
                         "xB condition, got " + std::to_string(x.rows()) + "x" +
                         std::to_string(x.cols()) + " and " +
                         std::to_string(cond.rows()) + "x" +
                         std::to_string(cond.cols()));
  }
}

}  // namespace

// ---------------------------------------------------------------- net

CoefficientNet::CoefficientNet(std::vector<int> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw DimensionError("coefficient net needs >= 2 widths");
  for (int w : widths_) {
    if (w <= 0) throw DimensionError("coefficient net widths must be positive");
  }
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    layers_.push_back({Eigen::MatrixXd::Zero(widths_[i + 1], widths_[i]),
                       Eigen::VectorXd::Zero(widths_[i + 1])});
  }
}

std::size_t CoefficientNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

Eigen::MatrixXd CoefficientNet::forward(const Eigen::MatrixXd& input) const {
  Eigen::MatrixXd h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::MatrixXd pre = layers_[i].weight * h;
    pre.colwise() += layers_[i].bias;
    if (i + 1 < layers_.size()) {
      h = pre.cwiseMax(kLeakySlope * pre);
    } else {
      h = std::move(pre);
    }
  }
  return h;
}

// ---------------------------------------------------------------- coupling

CouplingLayer::CouplingLayer(int width, int cond_dim,
                             const std::vector<int>& hidden, double s_clamp)
    : width_(width), split_(width / 2), cond_dim_(cond_dim), s_clamp_(s_clamp) {
  if (width < 2) throw DimensionError("coupling layer width must be >= 2");
  if (cond_dim < 0) throw DimensionError("negative condition dimension");
  if (!(s_clamp > 0.0)) throw DimensionError("s_clamp must be positive");
  std::vector<int> widths;
  widths.push_back(split_ + cond_dim_);
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(2 * active());
  net_ = CoefficientNet(std::move(widths));
}

CouplingLayer::Coefficients CouplingLayer::coefficients(
    const Eigen::MatrixXd& passive, const Eigen::MatrixXd& cond) const {
  Eigen::MatrixXd input(split_ + cond_dim_, passive.cols());
  input.topRows(split_) = passive;
  input.bottomRows(cond_dim_) = cond;
  const Eigen::MatrixXd out = net_.forward(input);

  Coefficients c;
  c.s_raw = out.topRows(active());
  c.s = s_clamp_ * (c.s_raw / s_clamp_).array().tanh();
  c.t = out.bottomRows(active());
  return c;
}

CouplingLayer::Output CouplingLayer::forward(const Eigen::MatrixXd& x,
                                             const Eigen::MatrixXd& cond) const {
  check_batch(x, width_, cond, cond_dim_, "coupling forward");
  const Coefficients c = coefficients(x.topRows(split_), cond);
  Output out;
  out.y.resize(width_, x.cols());
  out.y.topRows(split_) = x.topRows(split_);
  out.y.bottomRows(active()) =
      x.bottomRows(active()).cwiseProduct(c.s.array().exp().matrix()) + c.t;
  out.logdet = c.s.colwise().sum().transpose();
  return out;
}

Eigen::MatrixXd CouplingLayer::inverse(const Eigen::MatrixXd& y,
                                       const Eigen::MatrixXd& cond) const {
  check_batch(y, width_, cond, cond_dim_, "coupling inverse");
  const Coefficients c = coefficients(y.topRows(split_), cond);
  Eigen::MatrixXd x(width_, y.cols());
  x.topRows(split_) = y.topRows(split_);
  x.bottomRows(active()) =
      (y.bottomRows(active()) - c.t).cwiseProduct((-c.s).array().exp().matrix());
  return x;
}

// ---------------------------------------------------------------- permutation

Permutation Permutation::identity(int n) {
  std::vector<int> map(static_cast<std::size_t>(n));
  std::iota(map.begin(), map.end(), 0);
  return from_map(std::move(map));
}

Permutation Permutation::random(int n, std::uint64_t seed) {
  std::vector<int> map(static_cast<std::size_t>(n));
  std::iota(map.begin(), map.end(), 0);
  Rng rng(seed);
  // Fisher-Yates with an explicit draw so the result does not depend on the
  // standard library's shuffle implementation.
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(map[static_cast<std::size_t>(i)], map[static_cast<std::size_t>(j)]);
  }
  return from_map(std::move(map), seed);
}

Permutation Permutation::from_map(std::vector<int> map, std::uint64_t seed) {
  Permutation p;
  p.inverse_.assign(map.size(), -1);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const int m = map[i];
    if (m < 0 || static_cast<std::size_t>(m) >= map.size() ||
        p.inverse_[static_cast<std::size_t>(m)] != -1) {
      throw FormatError("permutation map is not a bijection");
    }
    p.inverse_[static_cast<std::size_t>(m)] = static_cast<int>(i);
  }
  p.map_ = std::move(map);
  p.seed_ = seed;
  return p;
}

Eigen::MatrixXd Permutation::apply(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd y(x.rows(), x.cols());
  for (std::size_t i = 0; i < map_.size(); ++i) {
    y.row(static_cast<Eigen::Index>(i)) = x.row(map_[i]);
  }
  return y;
}

Eigen::MatrixXd Permutation::revert(const Eigen::MatrixXd& y) const {
  Eigen::MatrixXd x(y.rows(), y.cols());
  for (std::size_t i = 0; i < map_.size(); ++i) {
    x.row(map_[i]) = y.row(static_cast<Eigen::Index>(i));
  }
  return x;
}

// ---------------------------------------------------------------- model

FlowConfig FlowConfig::defaults_for(const std::string& chain_name, int dof,
                                    int pose_dim, bool planar) {
  FlowConfig c;
  c.chain_name = chain_name;
  c.dof = dof;
  c.width = planar ? dof + 1 : dof + 2;
  c.cond_dim = pose_dim + 1;
  c.num_layers = 6;
  c.hidden = {128, 128, 128};
  return c;
}

FlowModel::FlowModel(const FlowConfig& config) : config_(config) {
  if (config_.dof < 1) throw DimensionError("flow dof must be >= 1");
  if (config_.width < config_.dof) {
    throw DimensionError("flow width must be at least the chain dof");
  }
  if (config_.num_layers < 1) throw DimensionError("flow needs >= 1 layer");

  Rng init(stream_seed(config_.seed, 0));
  for (int k = 0; k < config_.num_layers; ++k) {
    permutations_.push_back(Permutation::random(
        config_.width, stream_seed(config_.seed, 1000 + static_cast<std::uint64_t>(k))));
    CouplingLayer layer(config_.width, config_.cond_dim, config_.hidden,
                        config_.s_clamp);
    auto& dense = layer.net().layers();
    for (std::size_t i = 0; i + 1 < dense.size(); ++i) {
      const auto fan_in = static_cast<double>(dense[i].weight.cols());
      std::uniform_real_distribution<double> u(-std::sqrt(6.0 / fan_in),
                                               std::sqrt(6.0 / fan_in));
      for (Eigen::Index c = 0; c < dense[i].weight.cols(); ++c) {
        for (Eigen::Index r = 0; r < dense[i].weight.rows(); ++r) {
          dense[i].weight(r, c) = u(init);
        }
      }
    }
    couplings_.push_back(std::move(layer));
  }
}

std::size_t FlowModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : couplings_) n += c.net().parameter_count();
  return n;
}

void FlowModel::zero_parameters() {
  for (auto& c : couplings_) {
    for (auto& l : c.net().layers()) {
      l.weight.setZero();
      l.bias.setZero();
    }
  }
}

void FlowModel::randomize_parameters(Rng& rng, double scale) {
  for (auto& c : couplings_) {
    for (auto& l : c.net().layers()) {
      const double bound = scale / std::sqrt(static_cast<double>(l.weight.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) {
        for (Eigen::Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = u(rng);
      }
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = u(rng);
    }
  }
}

// ---------------------------------------------------------------- flow ops

LatentResult flow_to_latent(const FlowModel& model, const Eigen::MatrixXd& x,
                            const Eigen::MatrixXd& cond) {
  check_batch(x, model.width(), cond, model.cond_dim(), "flow_to_latent");
  LatentResult r{x, Eigen::VectorXd::Zero(x.cols())};
  for (std::size_t k = 0; k < model.num_layers(); ++k) {
    auto out = model.coupling(k).forward(model.permutation(k).apply(r.z), cond);
    r.z = std::move(out.y);
    r.logdet += out.logdet;
  }
  return r;
}

Eigen::MatrixXd flow_from_latent(const FlowModel& model, const Eigen::MatrixXd& z,
                                 const Eigen::MatrixXd& cond) {
  check_batch(z, model.width(), cond, model.cond_dim(), "flow_from_latent");
  Eigen::MatrixXd x = z;
  for (std::size_t k = model.num_layers(); k-- > 0;) {
    x = model.permutation(k).revert(model.coupling(k).inverse(x, cond));
  }
  return x;
}

Eigen::VectorXd standard_normal_log_density(const Eigen::MatrixXd& z) {
  const double norm_const =
      -0.5 * static_cast<double>(z.rows()) * std::log(2.0 * std::numbers::pi);
  return (-0.5 * z.colwise().squaredNorm().array() + norm_const).transpose();
}

Eigen::VectorXd log_prob(const FlowModel& model, const Eigen::MatrixXd& x,
                         const Eigen::MatrixXd& cond) {
  const LatentResult r = flow_to_latent(model, x, cond);
  return standard_normal_log_density(r.z) + r.logdet;
}

Eigen::VectorXd inference_condition(const FlowModel& model,
                                    const Eigen::VectorXd& pose_encoding) {
  if (pose_encoding.size() + 1 != model.cond_dim()) {
    throw DimensionError("pose encoding has " + std::to_string(pose_encoding.size()) +
                         " entries, model expects " +
                         std::to_string(model.cond_dim() - 1));
  }
  Eigen::VectorXd cond(model.cond_dim());
  cond.head(pose_encoding.size()) = pose_encoding;
  cond[cond.size() - 1] = 0.0;
  return cond;
}

Eigen::MatrixXd sample_solutions(const FlowModel& model,
                                 const Eigen::VectorXd& pose_encoding,
                                 int count, double latent_scale, Rng& rng) {
  if (count < 0) throw DimensionError("sample count must be >= 0");
  if (!(latent_scale > 0.0)) throw DimensionError("latent scale must be > 0");
  const Eigen::VectorXd cond_col = inference_condition(model, pose_encoding);
  if (count == 0) return Eigen::MatrixXd(0, model.dof());

  std::normal_distribution<double> normal(0.0, latent_scale);
  Eigen::MatrixXd z(model.width(), count);
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) = normal(rng);
  }
  const Eigen::MatrixXd cond = cond_col.replicate(1, count);
  const Eigen::MatrixXd x = flow_from_latent(model, z, cond);
  return x.topRows(model.dof()).transpose();
}

}  // namespace flowik
