#include <benchmark/benchmark.h>

#include "flowik/chain_io.hpp"
#include "flowik/datagen.hpp"
#include "flowik/evaluation.hpp"
#include "flowik/training.hpp"

using namespace flowik;

namespace {

FlowModel default_model(const KinematicChain& chain) {
  return FlowModel(FlowConfig::defaults_for(chain.name(), static_cast<int>(chain.dof()),
                                            pose_encoding_dim(chain),
                                            chain.task_space() == TaskSpace::planar_xy));
}

void BM_ForwardKinematics(benchmark::State& state) {
  const KinematicChain chain = load_chain("arm7");
  Rng rng(1);
  const JointVector q = sample_uniform_config(chain, rng);
  for (auto _ : state) benchmark::DoNotOptimize(forward_kinematics(chain, q));
}
BENCHMARK(BM_ForwardKinematics);

void BM_Jacobian(benchmark::State& state) {
  const KinematicChain chain = load_chain("arm7");
  Rng rng(2);
  const JointVector q = sample_uniform_config(chain, rng);
  for (auto _ : state) benchmark::DoNotOptimize(jacobian(chain, q));
}
BENCHMARK(BM_Jacobian);

void BM_Refine(benchmark::State& state) {
  const KinematicChain chain = load_chain("arm7");
  Rng rng(3);
  const Pose target = forward_kinematics(chain, sample_uniform_config(chain, rng));
  const JointVector seed = sample_uniform_config(chain, rng);
  for (auto _ : state) benchmark::DoNotOptimize(dls_refine(chain, target, seed));
}
BENCHMARK(BM_Refine);

void BM_Sample(benchmark::State& state) {
  const KinematicChain chain = load_chain("raily_chain3");
  const FlowModel model = default_model(chain);
  Rng rng(4);
  const Eigen::VectorXd pose =
      encode_condition(chain, forward_kinematics(chain, sample_uniform_config(chain, rng)));
  const int count = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_solutions(model, pose, count, 0.25, rng));
  }
  state.SetItemsProcessed(state.iterations() * count);
}
BENCHMARK(BM_Sample)->Arg(1)->Arg(100)->Arg(800)->Unit(benchmark::kMicrosecond);

void BM_TrainingStep(benchmark::State& state) {
  const KinematicChain chain = load_chain("raily_chain3");
  FlowModel model = default_model(chain);
  const Dataset ds = generate_dataset(chain, 128, 5);
  TrainConfig cfg;
  TrainState st = TrainState::initial(model, cfg);
  Rng rng(6);
  for (auto _ : state) {
    const SoftflowBatch b =
        softflow_perturb(pad_joints(ds.joints, model.width()), cfg.softflow_scale_max, rng);
    const LossGradient lg = backprop(model, b.x, assemble_condition(ds.poses, b.scale));
    optimizer_step(st, model, lg.grads, cfg);
  }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

void BM_MMD(benchmark::State& state) {
  Rng rng(7);
  std::normal_distribution<double> n;
  Eigen::MatrixXd x(50, 4), y(50, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = n(rng);
    y.data()[i] = n(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(mmd(x, y));
}
BENCHMARK(BM_MMD);

}  // namespace

BENCHMARK_MAIN();
