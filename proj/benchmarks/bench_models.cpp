#include <benchmark/benchmark.h>

#include <random>

#include "monde/eval.hpp"
#include "monde/gaussian.hpp"
#include "monde/models.hpp"

namespace {

monde::ModelSpec spec(monde::Family family, int D, int K) {
  monde::ModelSpec s;
  s.family = family;
  s.covariates = D;
  s.responses = K;
  return s;
}

Eigen::MatrixXd normal(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void BM_ObjectiveGradient(benchmark::State& state, monde::Family family, int D, int K) {
  const auto model = monde::make_model(spec(family, D, K), 1);
  const auto X = normal(state.range(0), D, 2);
  const auto Y = normal(state.range(0), K, 3);
  std::vector<double> grad;
  for (auto _ : state) benchmark::DoNotOptimize(model->objective_gradient(X, Y, grad));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK_CAPTURE(BM_ObjectiveGradient, umonde, monde::Family::umonde, 1, 1)->Arg(128)->Arg(1024);
BENCHMARK_CAPTURE(BM_ObjectiveGradient, made6, monde::Family::monde_made, 0, 6)->Arg(128)->Arg(1024);
BENCHMARK_CAPTURE(BM_ObjectiveGradient, copula3, monde::Family::copula_const, 2, 3)->Arg(128);
BENCHMARK_CAPTURE(BM_ObjectiveGradient, pumonde2, monde::Family::pumonde, 1, 2)->Arg(128)->Arg(1024);
BENCHMARK_CAPTURE(BM_ObjectiveGradient, pumonde3, monde::Family::pumonde, 2, 3)->Arg(128);

void BM_PumondeFullDensity(benchmark::State& state) {
  const auto model = monde::make_model(spec(monde::Family::pumonde, 2, static_cast<int>(state.range(0))), 1);
  const auto& p = dynamic_cast<const monde::Pumonde&>(*model);
  const auto X = normal(256, 2, 2);
  const auto Y = normal(256, state.range(0), 3);
  for (auto _ : state) benchmark::DoNotOptimize(p.full_density(X, Y));
}
BENCHMARK(BM_PumondeFullDensity)->DenseRange(2, 4);

void BM_BvnCdf(benchmark::State& state) {
  double a = -1.3;
  for (auto _ : state) {
    benchmark::DoNotOptimize(monde::bvn_cdf(a, 0.4, 0.8));
    a += 1e-9;
  }
}
BENCHMARK(BM_BvnCdf);

void BM_MvnCdf(benchmark::State& state) {
  const int K = static_cast<int>(state.range(0));
  Eigen::MatrixXd rho = Eigen::MatrixXd::Constant(K, K, 0.4);
  rho.diagonal().setOnes();
  const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(K, -0.5, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(monde::mvn_cdf(a, rho));
}
BENCHMARK(BM_MvnCdf)->DenseRange(3, 4);

void BM_MiQuadrature(benchmark::State& state) {
  auto logpdf = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return Eigen::VectorXd(-1.3 - (a.array().square() - 1.6 * a.array() * b.array() + b.array().square()) / 0.72);
  };
  for (auto _ : state) {
    benchmark::DoNotOptimize(monde::mutual_information_quadrature(logpdf, monde::Box{-7, 7, -7, 7},
                                                                  static_cast<int>(state.range(0))));
  }
}
BENCHMARK(BM_MiQuadrature)->Arg(128)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
