#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "stein/amortize.hpp"
#include "stein/energy.hpp"
#include "testutil.hpp"

using namespace stein;
using Catch::Approx;

namespace {

AnalyticTarget std_normal_1d() {
  return AnalyticTarget::gaussian(Tensor::vec({0.0}), Tensor::vec({1.0}));
}

Mlp scalar_net(double w) {  // f(η;ξ) = w·ξ, exactly one parameter
  return Mlp(std::vector<Mlp::Layer>{{Tensor::wrap({1, 1}, {w}), Tensor{}, Act::Identity}});
}

Mlp location_scale_net(double mu, double sigma) {
  return Mlp(std::vector<Mlp::Layer>{
      {Tensor::wrap({1, 1}, {sigma}), Tensor::wrap({1}, {mu}), Act::Identity}});
}

double cosine(const Tensor& a, const Tensor& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return num / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("noise source: laws, determinism") {
  NoiseSource u(3, NoiseSource::Law::UniformPm1, 5);
  Tensor du = u.draw(100);
  REQUIRE(du.rows() == 100);
  REQUIRE(du.cols() == 3);
  for (std::size_t i = 0; i < du.size(); ++i) {
    REQUIRE(du[i] >= -1.0);
    REQUIRE(du[i] <= 1.0);
  }
  NoiseSource a(2, NoiseSource::Law::StandardNormal, 9);
  NoiseSource b(2, NoiseSource::Law::StandardNormal, 9);
  REQUIRE(testutil::max_abs_diff(a.draw(50), b.draw(50)) == 0.0);
}

TEST_CASE("fit rule: zero step size is a no-op with zero objective") {
  AnalyticTarget p = std_normal_1d();
  Rng rng(3);
  Mlp gen = testutil::random_smooth_net(rng, 2, 4, 1);
  Tensor theta0 = gen.flatten_params();
  AmortizeConfig cfg;
  cfg.rule = AmortizeRule::Fit;
  cfg.batch = 10;
  cfg.step = 0.0;
  NoiseSource noise(2, NoiseSource::Law::UniformPm1, 1);
  AmortizeStepInfo info = amortized_step_fit(gen, p, cfg, noise);
  REQUIRE(info.fit_objective_initial == 0.0);
  REQUIRE(info.fit_objective_final == 0.0);
  REQUIRE(info.update_norm == 0.0);
  Tensor theta1 = gen.flatten_params();
  REQUIRE(std::memcmp(theta0.data(), theta1.data(), theta0.size() * sizeof(double)) == 0);
}

TEST_CASE("fit rule: known parameter shift drops the objective by 90% in 20 steps") {
  Mlp gen = scalar_net(1.0);
  Mlp shifted = scalar_net(1.5);  // closed-form least-squares optimum is w = 1.5
  Rng rng(5);
  Tensor xi = testutil::random_input(rng, 30, 1, -1.0, 1.0);
  Tensor targets = shifted.forward(xi);
  AmortizeStepInfo info = apply_fit(gen, xi, targets, 20);
  REQUIRE(info.fit_objective_final <= 0.1 * info.fit_objective_initial);
  REQUIRE(std::abs(gen.layer(0).w[0] - 1.5) <= 0.05);
}

TEST_CASE("fit rule with m=1: target is a pure score step") {
  AnalyticTarget p = std_normal_1d();
  Mlp gen = scalar_net(0.8);
  Tensor xi = Tensor::wrap({1, 1}, {0.6});
  Tensor out = gen.forward(xi);
  double h = 0.0;
  Tensor delta = amortize_delta(gen, xi, p, BandwidthPolicy::median(0.5), &h);
  Tensor score = p.grad_log_density(out.row(0));
  REQUIRE(delta.at(0, 0) == Approx(score[0]).margin(1e-12));
}

TEST_CASE("least squares: hand-solved 1x1 normal equation") {
  Mlp gen = scalar_net(1.0);
  Tensor xi = Tensor::wrap({1, 1}, {2.0});
  Tensor delta = Tensor::wrap({1, 1}, {4.0});
  apply_ls(gen, xi, delta, /*eps=*/1.0, /*ridge=*/0.0);
  // δ = (ξ·Δ)/(ξ·ξ) = 8/4 = 2; w := 1 + 1·2
  REQUIRE(gen.layer(0).w[0] == Approx(3.0).epsilon(1e-12));
}

TEST_CASE("least squares: zero direction leaves parameters unchanged") {
  Rng rng(7);
  Mlp gen = testutil::random_smooth_net(rng, 2, 3, 2);
  Tensor theta0 = gen.flatten_params();
  Tensor xi = testutil::random_input(rng, 5, 2);
  AmortizeStepInfo info = apply_ls(gen, xi, Tensor::zeros({5, 2}), 0.5, 1e-6);
  REQUIRE(info.update_norm == 0.0);
  REQUIRE(std::memcmp(theta0.data(), gen.flatten_params().data(),
                      theta0.size() * sizeof(double)) == 0);
}

TEST_CASE("least squares: singular system without ridge names the remedy") {
  // one sample but two parameters (weight + bias): rank-deficient normal eqs
  Mlp gen = location_scale_net(0.0, 1.0);
  Tensor xi = Tensor::wrap({1, 1}, {2.0});
  Tensor delta = Tensor::wrap({1, 1}, {4.0});
  REQUIRE_THROWS_WITH(apply_ls(gen, xi, delta, 1.0, 0.0),
                      Catch::Matchers::ContainsSubstring("ridge"));
  REQUIRE_NOTHROW(apply_ls(gen, xi, delta, 1.0, 1e-8));
}

TEST_CASE("least squares guard rejects oversized parameter counts") {
  Rng rng(11);
  std::vector<LayerSpec> specs{{10, 600, Act::Tanh}, {600, 2, Act::Identity}};
  Mlp big = Mlp::init_gaussian(specs, 0.1, rng);
  REQUIRE(big.param_count() > 5000);
  Tensor xi = testutil::random_input(rng, 2, 10);
  REQUIRE_THROWS_AS(apply_ls(big, xi, Tensor::zeros({2, 2}), 0.1, 1e-6),
                    std::invalid_argument);
}

TEST_CASE("least squares direction matches the explicit-Jacobian oracle") {
  Rng rng(13);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<LayerSpec> specs{{2, 3, Act::Tanh}, {3, 2, Act::Identity, false}};
    Mlp gen = Mlp::init_gaussian(specs, 0.7, rng);
    std::size_t pdim = gen.param_count();
    REQUIRE(pdim <= 20);
    std::size_t m = 8;
    Tensor xi = testutil::random_input(rng, m, 2, -1.0, 1.0);
    Tensor delta = testutil::random_input(rng, m, 2, -1.0, 1.0);

    // finite-difference Jacobian of the stacked outputs w.r.t. parameters
    Tensor jac = Tensor::zeros({m * 2, pdim});
    Mlp work = gen;
    Tensor theta = gen.flatten_params();
    const double step = 1e-6;
    for (std::size_t k = 0; k < pdim; ++k) {
      double keep = theta[k];
      theta[k] = keep + step;
      work.set_params(theta);
      Tensor up = work.forward(xi);
      theta[k] = keep - step;
      work.set_params(theta);
      Tensor dn = work.forward(xi);
      theta[k] = keep;
      for (std::size_t r = 0; r < m * 2; ++r)
        jac.at(r, k) = (up[r] - dn[r]) / (2.0 * step);
    }
    work.set_params(theta);

    Mlp solved = gen;
    apply_ls(solved, xi, delta, 1.0, 1e-10);
    Tensor dls = solved.flatten_params() - gen.flatten_params();

    // chain-rule direction δ_cr = JᵀΔ; (JᵀJ)·δ_ls should align with it
    Tensor dcr = Tensor::zeros({pdim});
    Tensor jtj_dls = Tensor::zeros({pdim});
    for (std::size_t kk = 0; kk < pdim; ++kk) {
      for (std::size_t r = 0; r < m * 2; ++r) dcr[kk] += jac.at(r, kk) * delta[r];
    }
    // (JᵀJ)δ = Jᵀ(Jδ)
    Tensor jdls = Tensor::zeros({m * 2});
    for (std::size_t r = 0; r < m * 2; ++r)
      for (std::size_t kk = 0; kk < pdim; ++kk) jdls[r] += jac.at(r, kk) * dls[kk];
    for (std::size_t kk = 0; kk < pdim; ++kk)
      for (std::size_t r = 0; r < m * 2; ++r) jtj_dls[kk] += jac.at(r, kk) * jdls[r];

    REQUIRE(cosine(jtj_dls, dcr) >= 0.999);
  }
}

TEST_CASE("chain rule with m=1 equals gradient ascent on log p(f(η;ξ))") {
  AnalyticTarget p = std_normal_1d();
  Rng rng(17);
  Mlp gen = testutil::random_smooth_net(rng, 2, 4, 1);
  Tensor xi = testutil::random_input(rng, 1, 2, -1.0, 1.0);
  const double eps = 1e-3;

  Mlp stepped = gen;
  Tensor out = gen.forward(xi);
  Tensor delta = p.grad_log_density_batch(out);  // n=1: Δx is the plain score
  apply_chain(stepped, xi, delta, eps, nullptr);
  Tensor got = stepped.flatten_params() - gen.flatten_params();

  // oracle: ε · d/dη [log p(f(η;ξ))] by central differences
  Mlp work = gen;
  Tensor theta = gen.flatten_params();
  Tensor want = testutil::fd_grad(
      [&](const Tensor& t) {
        work.set_params(t);
        Tensor y = work.forward(xi);
        return p.log_density_unnormalized(y.row(0));
      },
      theta, 1e-6);
  for (std::size_t k = 0; k < want.size(); ++k)
    REQUIRE(got[k] == Approx(eps * want[k]).margin(1e-8));
}

TEST_CASE("all rules leave parameters unchanged on a zero direction") {
  Rng rng(19);
  Mlp gen = testutil::random_smooth_net(rng, 2, 3, 2);
  Tensor xi = testutil::random_input(rng, 6, 2);
  Tensor zero = Tensor::zeros({6, 2});
  Tensor theta0 = gen.flatten_params();

  Mlp g1 = gen;
  apply_chain(g1, xi, zero, 0.3, nullptr);
  REQUIRE(testutil::max_abs_diff(g1.flatten_params(), theta0) == 0.0);

  Mlp g2 = gen;
  Adam fresh(1e-3, g2.param_count());
  apply_chain(g2, xi, zero, 0.3, &fresh);
  REQUIRE(testutil::max_abs_diff(g2.flatten_params(), theta0) == 0.0);

  Mlp g3 = gen;
  apply_ls(g3, xi, zero, 0.3, 1e-8);
  REQUIRE(testutil::max_abs_diff(g3.flatten_params(), theta0) == 0.0);

  Mlp g4 = gen;
  Tensor targets = g4.forward(xi);  // Δ ≡ 0 means targets equal outputs
  apply_fit(g4, xi, targets, 10);
  REQUIRE(testutil::max_abs_diff(g4.flatten_params(), theta0) == 0.0);
}

TEST_CASE("rule consistency: small-step fit approaches the least-squares step") {
  AnalyticTarget p = std_normal_1d();
  Rng rng(23);
  Mlp gen = location_scale_net(0.4, 0.9);
  NoiseSource noise(1, NoiseSource::Law::StandardNormal, 3);
  Tensor xi = noise.draw(40);
  double h = 0.0;
  Tensor delta = amortize_delta(gen, xi, p, BandwidthPolicy::median(1.0), &h);
  const double eps = 1e-3;

  Mlp fit_gen = gen;
  Tensor targets = gen.forward(xi);
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] += eps * delta[i];
  apply_fit(fit_gen, xi, targets, 200);

  Mlp ls_gen = gen;
  apply_ls(ls_gen, xi, delta, eps, 0.0);

  Tensor diff = fit_gen.flatten_params() - ls_gen.flatten_params();
  REQUIRE(diff.norm() <= 1e-3);
}

TEST_CASE("chain-rule training matches the target moments") {
  AnalyticTarget p = std_normal_1d();
  Rng rng(29);
  std::vector<LayerSpec> specs{{2, 16, Act::Tanh}, {16, 1, Act::Identity}};
  Mlp gen = Mlp::init_gaussian(specs, 0.3, rng);
  AmortizeConfig cfg;
  cfg.rule = AmortizeRule::ChainRule;
  cfg.batch = 100;
  cfg.step = 0.1;
  cfg.iterations = 3000;
  cfg.adam_lr = 1e-3;
  cfg.bandwidth = BandwidthPolicy::median(1.0);
  amortize_train(gen, p, cfg, NoiseSource::Law::UniformPm1, 2, 11);

  NoiseSource fresh(2, NoiseSource::Law::UniformPm1, 999);
  ParticleSet out(gen.forward(fresh.draw(10000)));
  REQUIRE(std::abs(out.mean()[0]) <= 0.1);
  double sd = std::sqrt(out.variance()[0]);
  REQUIRE(sd >= 0.85);
  REQUIRE(sd <= 1.15);
}

TEST_CASE("reparam oracle: contract checks on the generator family") {
  Rng rng(31);
  Mlp deep = testutil::random_smooth_net(rng, 1, 4, 1);
  NoiseSource noise(1, NoiseSource::Law::StandardNormal, 1);
  AmortizeConfig cfg;
  cfg.batch = 10;
  AnalyticTarget p = std_normal_1d();
  REQUIRE_THROWS_AS(reparam_kl_step(deep, p, cfg, noise), std::invalid_argument);

  Mlp ok = location_scale_net(0.0, 1.0);
  NoiseSource uniform(1, NoiseSource::Law::UniformPm1, 1);
  REQUIRE_THROWS_AS(reparam_kl_step(ok, p, cfg, uniform), std::invalid_argument);

  Tensor w = Tensor::wrap({2, 2}, {1.0, 0.3, 0.0, 1.0});  // off-diagonal entry
  Mlp nondiag(std::vector<Mlp::Layer>{{w, Tensor::zeros({2}), Act::Identity}});
  REQUIRE_THROWS_AS(location_scale_view(nondiag), std::invalid_argument);

  Mlp degenerate = location_scale_net(0.0, 0.0);
  REQUIRE_THROWS_AS(location_scale_view(degenerate), std::invalid_argument);
}

TEST_CASE("reparam oracle: update vanishes identically when q equals p") {
  AnalyticTarget p = std_normal_1d();
  Mlp gen = location_scale_net(0.0, 1.0);  // q = N(0,1) = p
  NoiseSource noise(1, NoiseSource::Law::StandardNormal, 17);
  AmortizeConfig cfg;
  cfg.batch = 200;
  cfg.step = 0.01;
  AmortizeStepInfo info = reparam_kl_step(gen, p, cfg, noise);
  REQUIRE(info.update_norm == 0.0);  // Δ̃x is pointwise zero for matching Gaussians
}

TEST_CASE("reparam oracle converges on a shifted Gaussian") {
  AnalyticTarget p = AnalyticTarget::gaussian(Tensor::vec({1.5}), Tensor::vec({1.0}));
  Mlp gen = location_scale_net(0.0, 0.5);
  NoiseSource noise(1, NoiseSource::Law::StandardNormal, 23);
  AmortizeConfig cfg;
  cfg.batch = 100;
  cfg.step = 0.05;
  Adam opt(1e-2, gen.param_count());
  for (int it = 0; it < 2000; ++it) reparam_kl_step(gen, p, cfg, noise, &opt);
  LocationScale ls = location_scale_view(gen);
  REQUIRE(std::abs(ls.mu[0] - 1.5) <= 0.1);
  REQUIRE(std::abs(ls.sigma[0] - 1.0) <= 0.1);
}

TEST_CASE("kernel smoothing relates the two update directions (light check)") {
  // E_q[(score_p - score_q)·k(x, xq)] ≈ E_q[score_p·k + ∇k] at query points
  AnalyticTarget p = std_normal_1d();
  AnalyticTarget q = AnalyticTarget::gaussian(Tensor::vec({0.5}), Tensor::vec({0.64}));
  RbfKernel kernel(1.0);
  ParticleSet draws = sample_analytic(q, 20000, 7);
  for (double query : {-0.5, 0.0, 0.8}) {
    std::vector<double> xq{query};
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < draws.count(); ++i) {
      std::span<const double> x = draws.positions.row(i);
      double k = kernel.eval(x, xq);
      double sp = p.grad_log_density(x)[0];
      double sq = q.grad_log_density(x)[0];
      lhs += (sp - sq) * k;
      rhs += sp * k + kernel.grad_x(x, xq)[0];
    }
    lhs /= static_cast<double>(draws.count());
    rhs /= static_cast<double>(draws.count());
    REQUIRE(testutil::rel_err(lhs, rhs) <= 0.2);
  }
}

TEST_CASE("amortize_train: trace shape and determinism") {
  AnalyticTarget p = std_normal_1d();
  auto make = [&]() {
    Rng rng(41);
    std::vector<LayerSpec> specs{{2, 8, Act::Tanh}, {8, 1, Act::Identity}};
    Mlp gen = Mlp::init_gaussian(specs, 0.3, rng);
    AmortizeConfig cfg;
    cfg.batch = 20;
    cfg.iterations = 30;
    return amortize_train(gen, p, cfg, NoiseSource::Law::UniformPm1, 2, 5);
  };
  MetricTrace a = make(), b = make();
  REQUIRE(a.row_count() == 30);
  REQUIRE(a.columns().size() == 6);  // step, fit_objective, update_norm, ksd, mean, std
  REQUIRE(a.to_csv() == b.to_csv());
}
