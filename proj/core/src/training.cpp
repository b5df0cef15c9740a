#include "flowik/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "flowik/errors.hpp"

namespace flowik {

namespace {

// Activations of one coupling layer kept for the backward pass.
struct CouplingCache {
  Eigen::MatrixXd input;                 // permuted layer input, D x B
  std::vector<Eigen::MatrixXd> pre;      // pre-activations per dense layer
  std::vector<Eigen::MatrixXd> act;      // inputs to each dense layer
  Eigen::MatrixXd s;                     // clamped scale, A x B
  Eigen::MatrixXd exp_s;                 // A x B
};

double mean_nll(const Eigen::MatrixXd& z, const Eigen::VectorXd& logdet) {
  const Eigen::VectorXd nll = -(standard_normal_log_density(z) + logdet);
  return nll.mean();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
    throw std::invalid_argument("lr_decay must be in (0, 1]");
  }
  if (decay_interval_batches == 0) {
    throw std::invalid_argument("decay_interval_batches must be positive");
  }
  if (!(softflow_scale_max >= 0.0)) {
    throw std::invalid_argument("softflow_scale_max must be >= 0");
  }
  if (max_consecutive_skips < 0) {
    throw std::invalid_argument("max_consecutive_skips must be >= 0");
  }
}

double scheduled_lr(const TrainConfig& cfg, std::uint64_t batch_counter) {
  const auto decays = static_cast<double>(batch_counter / cfg.decay_interval_batches);
  return cfg.lr * std::pow(cfg.lr_decay, decays);
}

// ---------------------------------------------------------------- gradients

FlowGradients FlowGradients::zeros_like(const FlowModel& model) {
  FlowGradients g;
  for (std::size_t k = 0; k < model.num_layers(); ++k) {
    std::vector<DenseLayer> layers;
    for (const auto& l : model.coupling(k).net().layers()) {
      layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
    }
    g.nets.push_back(std::move(layers));
  }
  return g;
}

namespace {

template <typename Span, typename Nets>
std::vector<Span> collect_blocks(Nets& nets) {
  std::vector<Span> out;
  for (auto& net : nets) {
    for (auto& l : net) {
      out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
  }
  return out;
}

}  // namespace

std::vector<std::span<double>> FlowGradients::blocks() {
  return collect_blocks<std::span<double>>(nets);
}

std::vector<std::span<const double>> FlowGradients::blocks() const {
  return collect_blocks<std::span<const double>>(nets);
}

bool FlowGradients::all_finite() const {
  for (const auto& net : nets) {
    for (const auto& l : net) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
  }
  return true;
}

std::vector<std::span<double>> parameter_blocks(FlowModel& model) {
  std::vector<std::span<double>> out;
  for (std::size_t k = 0; k < model.num_layers(); ++k) {
    for (auto& l : model.coupling(k).net().layers()) {
      out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
  }
  return out;
}

std::vector<std::span<const double>> parameter_blocks(const FlowModel& model) {
  std::vector<std::span<const double>> out;
  for (std::size_t k = 0; k < model.num_layers(); ++k) {
    for (const auto& l : model.coupling(k).net().layers()) {
      out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
  }
  return out;
}

// ---------------------------------------------------------------- batches

Eigen::MatrixXd pad_joints(const Eigen::MatrixXd& joints, int width) {
  if (joints.rows() > width) {
    throw DimensionError("joint batch is wider than the flow");
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(width, joints.cols());
  out.topRows(joints.rows()) = joints;
  return out;
}

Eigen::MatrixXd assemble_condition(const Eigen::MatrixXd& poses,
                                   const Eigen::VectorXd& noise_scale) {
  if (noise_scale.size() != poses.cols()) {
    throw DimensionError("noise scale count does not match pose count");
  }
  Eigen::MatrixXd cond(poses.rows() + 1, poses.cols());
  cond.topRows(poses.rows()) = poses;
  cond.bottomRows(1) = noise_scale.transpose();
  return cond;
}

SoftflowBatch softflow_perturb(const Eigen::MatrixXd& batch, double scale_max,
                               Rng& rng) {
  if (!(scale_max >= 0.0)) throw std::invalid_argument("softflow scale must be >= 0");
  SoftflowBatch out{batch, Eigen::VectorXd::Zero(batch.cols())};
  if (scale_max == 0.0) return out;

  std::uniform_real_distribution<double> uniform(0.0, scale_max);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < batch.cols(); ++j) {
    const double c = uniform(rng);
    out.scale[j] = c;
    for (Eigen::Index i = 0; i < batch.rows(); ++i) out.x(i, j) += c * normal(rng);
  }
  return out;
}

// ---------------------------------------------------------------- loss

double mle_loss(const FlowModel& model, const Eigen::MatrixXd& x,
                const Eigen::MatrixXd& cond) {
  if (x.cols() != cond.cols()) {
    throw DimensionError("batch and condition column counts differ");
  }
  if (x.cols() == 0) throw DimensionError("empty batch");
  if (!x.allFinite() || !cond.allFinite()) {
    throw NumericalError("non-finite training batch", -1);
  }
  Eigen::MatrixXd z = x;
  Eigen::VectorXd logdet = Eigen::VectorXd::Zero(x.cols());
  for (std::size_t k = 0; k < model.num_layers(); ++k) {
    auto out = model.coupling(k).forward(model.permutation(k).apply(z), cond);
    if (!out.y.allFinite() || !out.logdet.allFinite()) {
      throw NumericalError("non-finite activation in coupling layer " +
                               std::to_string(k),
                           static_cast<int>(k));
    }
    z = std::move(out.y);
    logdet += out.logdet;
  }
  const double loss = mean_nll(z, logdet);
  if (!std::isfinite(loss)) throw NumericalError("non-finite loss", -1);
  return loss;
}

LossGradient backprop(const FlowModel& model, const Eigen::MatrixXd& x,
                      const Eigen::MatrixXd& cond) {
  if (x.rows() != model.width() || cond.rows() != model.cond_dim() ||
      x.cols() != cond.cols()) {
    throw DimensionError("backprop: batch shape does not match model");
  }
  if (x.cols() == 0) throw DimensionError("empty batch");

  const std::size_t n_layers = model.num_layers();
  const double inv_b = 1.0 / static_cast<double>(x.cols());
  std::vector<CouplingCache> caches(n_layers);

  // Forward, data to latent, keeping activations.
  Eigen::MatrixXd z = x;
  Eigen::VectorXd logdet = Eigen::VectorXd::Zero(x.cols());
  for (std::size_t k = 0; k < n_layers; ++k) {
    const CouplingLayer& layer = model.coupling(k);
    const auto& dense = layer.net().layers();
    CouplingCache& c = caches[k];
    const int d = layer.split();
    const int a = layer.active();

    c.input = model.permutation(k).apply(z);
    Eigen::MatrixXd h(d + layer.cond_dim(), x.cols());
    h.topRows(d) = c.input.topRows(d);
    h.bottomRows(layer.cond_dim()) = cond;
    for (std::size_t l = 0; l < dense.size(); ++l) {
      Eigen::MatrixXd pre = dense[l].weight * h;
      pre.colwise() += dense[l].bias;
      c.act.push_back(std::move(h));
      if (l + 1 < dense.size()) {
        h = pre.cwiseMax(CoefficientNet::kLeakySlope * pre);
      } else {
        h = pre;
      }
      c.pre.push_back(std::move(pre));
    }
    const double clamp = layer.s_clamp();
    c.s = clamp * (h.topRows(a) / clamp).array().tanh();
    c.exp_s = c.s.array().exp();

    z.resize(layer.width(), x.cols());
    z.topRows(d) = c.input.topRows(d);
    z.bottomRows(a) = c.input.bottomRows(a).cwiseProduct(c.exp_s) + h.bottomRows(a);
    logdet += c.s.colwise().sum().transpose();
  }

  LossGradient result;
  result.loss = mean_nll(z, logdet);
  result.grads = FlowGradients::zeros_like(model);

  // Backward. grad holds dL/d(output of layer k).
  Eigen::MatrixXd grad = z * inv_b;
  for (std::size_t k = n_layers; k-- > 0;) {
    const CouplingLayer& layer = model.coupling(k);
    const auto& dense = layer.net().layers();
    auto& gdense = result.grads.nets[k];
    const CouplingCache& c = caches[k];
    const int d = layer.split();
    const int a = layer.active();
    const double clamp = layer.s_clamp();

    const Eigen::MatrixXd g_active = grad.bottomRows(a);
    // L = ... - sum(s) / B, and y_a = x_a * exp(s) + t.
    Eigen::MatrixXd g_s =
        g_active.cwiseProduct(c.input.bottomRows(a)).cwiseProduct(c.exp_s).array() - inv_b;
    const Eigen::ArrayXXd ratio = c.s.array() / clamp;
    Eigen::MatrixXd g_out(2 * a, x.cols());
    g_out.topRows(a) = (g_s.array() * (1.0 - ratio.square())).matrix();
    g_out.bottomRows(a) = g_active;

    Eigen::MatrixXd g_pre = std::move(g_out);
    Eigen::MatrixXd g_in;
    for (std::size_t l = dense.size(); l-- > 0;) {
      gdense[l].weight.noalias() = g_pre * c.act[l].transpose();
      gdense[l].bias = g_pre.rowwise().sum();
      g_in.noalias() = dense[l].weight.transpose() * g_pre;
      if (l > 0) {
        const Eigen::MatrixXd& prev_pre = c.pre[l - 1];
        g_pre = (prev_pre.array() > 0.0)
                    .select(g_in, CoefficientNet::kLeakySlope * g_in);
      }
    }

    Eigen::MatrixXd g_input(layer.width(), x.cols());
    g_input.topRows(d) = grad.topRows(d) + g_in.topRows(d);
    g_input.bottomRows(a) = g_active.cwiseProduct(c.exp_s);
    grad = model.permutation(k).revert(g_input);
  }
  return result;
}

// ---------------------------------------------------------------- optimizer

namespace {

void skip_step(TrainState& state, const TrainConfig& cfg, const char* reason) {
  ++state.skipped_steps;
  ++state.consecutive_skips;
  spdlog::warn("batch {}: {}, step skipped ({} in a row)", state.batch_counter,
               reason, state.consecutive_skips);
  ++state.batch_counter;
  state.current_lr = scheduled_lr(cfg, state.batch_counter);
  if (state.consecutive_skips > cfg.max_consecutive_skips) {
    throw NumericalError("training aborted after " +
                         std::to_string(state.consecutive_skips) +
                         " consecutive non-finite steps");
  }
}

}  // namespace

TrainState TrainState::initial(const FlowModel& model, const TrainConfig& cfg) {
  TrainState s;
  for (const auto& block : parameter_blocks(model)) {
    s.first_moment.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(block.size())));
    s.second_moment.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(block.size())));
  }
  s.current_lr = scheduled_lr(cfg, 0);
  return s;
}

bool optimizer_step(TrainState& state, FlowModel& model,
                    const FlowGradients& grads, const TrainConfig& cfg) {
  auto params = parameter_blocks(model);
  const auto gblocks = grads.blocks();
  if (gblocks.size() != params.size() || state.first_moment.size() != params.size()) {
    throw DimensionError("gradient layout does not match model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (gblocks[i].size() != params[i].size() ||
        static_cast<std::size_t>(state.first_moment[i].size()) != params[i].size()) {
      throw DimensionError("gradient block " + std::to_string(i) +
                           " does not match parameter shape");
    }
  }

  const bool finite = grads.all_finite();
  if (finite) {
    ++state.adam_steps;
    const auto t = static_cast<double>(state.adam_steps);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);
    const double lr = state.current_lr;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Eigen::Map<Eigen::VectorXd> p(params[i].data(), static_cast<Eigen::Index>(params[i].size()));
      Eigen::Map<const Eigen::VectorXd> g(gblocks[i].data(), static_cast<Eigen::Index>(gblocks[i].size()));
      Eigen::VectorXd& m = state.first_moment[i];
      Eigen::VectorXd& v = state.second_moment[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
      p.array() -= lr * (m.array() / correction1) /
                   ((v.array() / correction2).sqrt() + cfg.epsilon);
    }
    state.consecutive_skips = 0;
    ++state.batch_counter;
    state.current_lr = scheduled_lr(cfg, state.batch_counter);
  } else {
    skip_step(state, cfg, "non-finite gradient");
  }
  return finite;
}

// ---------------------------------------------------------------- loop

TrainResult train(const KinematicChain& chain, const Dataset& dataset,
                  const TrainConfig& cfg, const FlowConfig& arch,
                  const TrainCallbacks& callbacks) {
  FlowModel model(arch);
  TrainState state = TrainState::initial(model, cfg);
  return train(chain, dataset, cfg, std::move(model), std::move(state), callbacks);
}

TrainResult train(const KinematicChain& chain, const Dataset& dataset,
                  const TrainConfig& cfg, FlowModel model, TrainState state,
                  const TrainCallbacks& callbacks) {
  cfg.validate();
  if (dataset.chain_name != chain.name()) {
    throw FormatError("dataset is for chain '" + dataset.chain_name +
                      "', training chain is '" + chain.name() + "'");
  }
  if (static_cast<std::size_t>(dataset.joints.rows()) != chain.dof() ||
      static_cast<int>(dataset.joints.rows()) != model.dof() ||
      dataset.poses.rows() + 1 != model.cond_dim()) {
    throw DimensionError("dataset shape does not match the flow model");
  }
  if (state.first_moment.size() != parameter_blocks(model).size()) {
    throw DimensionError("optimizer state does not match the flow model");
  }

  TrainResult result{std::move(model), std::move(state), false};
  const std::size_t n = dataset.size();
  if (cfg.max_batches == 0 || n == 0) return result;

  TrainState& st = result.state;
  FlowModel& m = result.model;
  st.current_lr = scheduled_lr(cfg, st.batch_counter);

  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  const std::uint64_t end_batch = st.batch_counter + cfg.max_batches;
  Rng rng(stream_seed(cfg.rng_seed, st.batch_counter));
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::size_t cursor = n;  // forces a shuffle on the first batch

  Eigen::MatrixXd joints(dataset.joints.rows(), static_cast<Eigen::Index>(batch));
  Eigen::MatrixXd poses(dataset.poses.rows(), static_cast<Eigen::Index>(batch));
  const auto t0 = std::chrono::steady_clock::now();
  double window_sum = 0.0;
  double previous_window = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t window_count = 0;

  while (st.batch_counter < end_batch) {
    if (cursor + batch > n) {
      for (std::size_t i = n - 1; i > 0; --i) {
        std::swap(order[i], order[rng() % (i + 1)]);
      }
      cursor = 0;
    }
    for (std::size_t j = 0; j < batch; ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      joints.col(col) = dataset.joints.col(order[cursor + j]);
      poses.col(col) = dataset.poses.col(order[cursor + j]);
    }
    cursor += batch;

    const SoftflowBatch noisy =
        softflow_perturb(pad_joints(joints, m.width()), cfg.softflow_scale_max, rng);
    const Eigen::MatrixXd cond = assemble_condition(poses, noisy.scale);
    const LossGradient lg = backprop(m, noisy.x, cond);
    const std::uint64_t this_batch = st.batch_counter;
    if (!std::isfinite(lg.loss)) {
      skip_step(st, cfg, "non-finite loss");
    } else if (optimizer_step(st, m, lg.grads, cfg)) {
      st.loss_history.push_back({this_batch, lg.loss});
    }

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    if (callbacks.on_batch) callbacks.on_batch(st, lg.loss, wall_ms);

    if (cfg.plateau_window > 0 && std::isfinite(lg.loss)) {
      window_sum += lg.loss;
      if (++window_count == cfg.plateau_window) {
        const double mean = window_sum / static_cast<double>(window_count);
        if (std::isfinite(previous_window) &&
            previous_window - mean < cfg.plateau_tolerance * std::abs(previous_window)) {
          spdlog::info("loss plateaued at batch {} (mean {:.6f})", st.batch_counter, mean);
          result.stopped_early = true;
          break;
        }
        previous_window = mean;
        window_sum = 0.0;
        window_count = 0;
      }
    }

    if (callbacks.interval > 0 && callbacks.on_interval &&
        st.batch_counter % callbacks.interval == 0) {
      if (!callbacks.on_interval(m, st)) {
        result.stopped_early = true;
        break;
      }
    }
  }
  return result;
}

}  // namespace flowik
