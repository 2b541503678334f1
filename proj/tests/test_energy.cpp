#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "stein/energy.hpp"
#include "stein/rng.hpp"
#include "testutil.hpp"

using namespace stein;
using Catch::Approx;

namespace {

Mlp identity_net(std::size_t d) {
  Tensor w = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) w.at(i, i) = 1.0;
  return Mlp(std::vector<Mlp::Layer>{{w, Tensor::zeros({d}), Act::Identity}});
}

Mlp zero_net(std::size_t in, std::size_t out) {
  return Mlp(std::vector<Mlp::Layer>{{Tensor::zeros({in, out}), Tensor::zeros({out}),
                                      Act::Identity}});
}

AutoencoderEnergy random_ae(Rng& rng, std::size_t d, std::size_t code) {
  std::vector<LayerSpec> es{{d, 5, Act::Tanh}, {5, code, Act::Identity}};
  std::vector<LayerSpec> ds{{code, 5, Act::Tanh}, {5, d, Act::Identity}};
  return AutoencoderEnergy(Mlp::init_gaussian(es, 0.5, rng),
                           Mlp::init_gaussian(ds, 0.5, rng));
}

}  // namespace

TEST_CASE("gaussian score and translation covariance") {
  AnalyticTarget p = AnalyticTarget::gaussian(Tensor::vec({2.0}), Tensor::vec({1.0}));
  Tensor g = p.grad_log_density(std::vector<double>{3.0});  // x = mu + 1, sigma = 1
  REQUIRE(g[0] == Approx(-1.0));

  AnalyticTarget shifted = AnalyticTarget::gaussian(Tensor::vec({2.5}), Tensor::vec({1.0}));
  Tensor g2 = shifted.grad_log_density(std::vector<double>{3.5});
  REQUIRE(g2[0] == Approx(g[0]).margin(1e-15));
}

TEST_CASE("analytic targets: validation of weights and variances") {
  REQUIRE_THROWS_AS(AnalyticTarget::gaussian(Tensor::vec({0.0}), Tensor::vec({0.0})),
                    std::invalid_argument);
  std::vector<AnalyticTarget::Component> comps{
      {0.4, Tensor::vec({0.0}), Tensor::vec({1.0})},
      {0.4, Tensor::vec({1.0}), Tensor::vec({1.0})}};
  REQUIRE_THROWS_AS(AnalyticTarget::gmm(comps), std::invalid_argument);  // weights != 1
}

TEST_CASE("gmm score: far point is dominated by the nearest component") {
  std::vector<AnalyticTarget::Component> comps{
      {0.5, Tensor::vec({-3.0}), Tensor::vec({1.0})},
      {0.5, Tensor::vec({3.0}), Tensor::vec({1.0})}};
  AnalyticTarget gmm = AnalyticTarget::gmm(comps);
  AnalyticTarget right = AnalyticTarget::gaussian(Tensor::vec({3.0}), Tensor::vec({1.0}));
  std::vector<double> x{3.7};
  double got = gmm.grad_log_density(x)[0];
  double want = right.grad_log_density(x)[0];
  REQUIRE(testutil::rel_err(got, want) <= 1e-3);
}

TEST_CASE("analytic scores match finite differences of the log density") {
  std::vector<AnalyticTarget::Component> comps{
      {0.3, Tensor::vec({-1.0, 0.5}), Tensor::vec({0.5, 1.5})},
      {0.7, Tensor::vec({2.0, -1.0}), Tensor::vec({2.0, 0.7})}};
  AnalyticTarget gmm = AnalyticTarget::gmm(comps);
  Rng rng(17);
  for (int rep = 0; rep < 30; ++rep) {
    Tensor x = rng.normal_tensor({2}, 0.0, 2.0);
    REQUIRE(score_matches_fd(gmm, {x.data(), 2}, 1e-5, 1e-6));
  }
}

TEST_CASE("sample_analytic: moments, degenerate mixture, reproducibility") {
  AnalyticTarget p = AnalyticTarget::gaussian(Tensor::vec({0.0}), Tensor::vec({1.0}));
  ParticleSet s = sample_analytic(p, 100000, 42);
  REQUIRE(std::abs(s.mean()[0]) <= 0.02);
  REQUIRE(std::abs(s.variance()[0] - 1.0) <= 0.05);

  std::vector<AnalyticTarget::Component> comps{
      {1.0, Tensor::vec({5.0}), Tensor::vec({0.25})},
      {0.0, Tensor::vec({-5.0}), Tensor::vec({0.25})}};
  AnalyticTarget gmm = AnalyticTarget::gmm(comps);
  ParticleSet gs = sample_analytic(gmm, 2000, 7);
  REQUIRE(std::abs(gs.mean()[0] - 5.0) <= 0.1);

  ParticleSet a = sample_analytic(p, 100, 9), b = sample_analytic(p, 100, 9);
  REQUIRE(testutil::max_abs_diff(a.positions, b.positions) == 0.0);
  REQUIRE_THROWS_AS(sample_analytic(p, 0, 1), std::invalid_argument);
}

TEST_CASE("autoencoder energy: perfect reconstruction and zero nets") {
  // D∘E = identity: zero residual, degenerate score flag
  AutoencoderEnergy perfect(identity_net(3), identity_net(3));
  std::vector<double> x{0.5, -1.0, 2.0};
  REQUIRE(perfect.phi(x) == 0.0);
  bool degenerate = false;
  Tensor g = perfect.grad_x_phi(x, {}, &degenerate);
  REQUIRE(degenerate);
  REQUIRE(g.max_abs() == 0.0);

  // zero nets: residual is x itself, phi = ||x||
  AutoencoderEnergy zeros(zero_net(3, 2), zero_net(2, 3));
  std::vector<double> x3{3.0, 0.0, 0.0};
  REQUIRE(zeros.phi(x3) == Approx(3.0));
}

TEST_CASE("autoencoder energy: phi >= 0 and gradients match finite differences") {
  Rng rng(23);
  for (int rep = 0; rep < 15; ++rep) {
    AutoencoderEnergy model = random_ae(rng, 4, 2);
    Tensor x = rng.normal_tensor({4});
    REQUIRE(model.phi({x.data(), 4}) >= 0.0);

    Tensor gx = model.grad_x_phi({x.data(), 4});
    Tensor wantx = testutil::fd_grad(
        [&](const Tensor& t) { return model.phi({t.data(), 4}); }, x);
    REQUIRE(testutil::max_rel_err(gx, wantx) <= 1e-5);

    Tensor gt = model.grad_theta_phi({x.data(), 4});
    AutoencoderEnergy work = model;
    Tensor wantt = testutil::fd_grad(
        [&](const Tensor& t) {
          work.set_theta(t);
          return work.phi({x.data(), 4});
        },
        model.get_theta());
    REQUIRE(testutil::max_rel_err(gt, wantt) <= 1e-5);
  }
}

TEST_CASE("grad_x_log_p equals minus the energy gradient") {
  Rng rng(29);
  AutoencoderEnergy model = random_ae(rng, 3, 2);
  Tensor x = rng.normal_tensor({3});
  Tensor s = grad_x_log_p(model, {x.data(), 3});
  Tensor gphi = model.grad_x_phi({x.data(), 3});
  for (std::size_t j = 0; j < 3; ++j) REQUIRE(s[j] == -gphi[j]);
}

TEST_CASE("joint energy: clamp floor, head gradient masking, label checks") {
  Rng rng(31);
  std::vector<LayerSpec> es{{3, 4, Act::Tanh}, {4, 2, Act::Identity}};
  std::vector<LayerSpec> ds{{2, 4, Act::Tanh}, {4, 3, Act::Identity}};
  // head with huge correct-class logits: cross entropy ~ 0 for label 0
  Tensor hw = Tensor::zeros({2, 2});
  Tensor hb = Tensor::wrap({2}, {50.0, -50.0});
  Mlp head(std::vector<Mlp::Layer>{{hw, hb, Act::Identity}});

  JointEnergy model(Mlp::init_gaussian(es, 0.4, rng), Mlp::init_gaussian(ds, 0.4, rng),
                    head, 0.2);
  REQUIRE(model.conditional());
  REQUIRE(model.num_classes() == 2);

  Tensor x = rng.normal_tensor({3});
  // cross entropy below m: joint term contributes exactly m
  AutoencoderEnergy base(Mlp::init_gaussian(es, 0.0001, rng),
                         Mlp::init_gaussian(ds, 0.0001, rng));
  JointEnergy clamped(base.encoder(), base.decoder(), head, 0.2);
  double phi_joint = clamped.phi({x.data(), 3}, 0);
  AutoencoderEnergy plain(base.encoder(), base.decoder());
  REQUIRE(phi_joint == Approx(plain.phi({x.data(), 3}) + 0.2).epsilon(1e-12));
  REQUIRE(phi_joint >= 0.2);  // total exponent term >= m

  // clamped cross entropy kills the classifier-head gradient exactly
  Tensor gt = clamped.grad_theta_phi({x.data(), 3}, 0);
  std::size_t head_params = head.param_count();
  for (std::size_t k = gt.size() - head_params; k < gt.size(); ++k) REQUIRE(gt[k] == 0.0);

  REQUIRE_THROWS_AS(model.phi({x.data(), 3}, 5), std::invalid_argument);
  REQUIRE_THROWS_AS(model.phi({x.data(), 3}), std::invalid_argument);
  AutoencoderEnergy uncond = random_ae(rng, 3, 2);
  REQUIRE_THROWS_AS(uncond.phi({x.data(), 3}, 0), std::invalid_argument);
}

TEST_CASE("joint energy gradients match finite differences away from the clamp") {
  Rng rng(37);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<LayerSpec> es{{3, 4, Act::Tanh}, {4, 2, Act::Identity}};
    std::vector<LayerSpec> ds{{2, 4, Act::Tanh}, {4, 3, Act::Identity}};
    std::vector<LayerSpec> hs{{2, 3, Act::Identity}};
    JointEnergy model(Mlp::init_gaussian(es, 0.5, rng), Mlp::init_gaussian(ds, 0.5, rng),
                      Mlp::init_gaussian(hs, 0.5, rng), 1e-4);  // tiny m: clamp inactive
    Tensor x = rng.normal_tensor({3});
    int y = rep % 3;

    double ce_margin = model.phi({x.data(), 3}, y);
    (void)ce_margin;
    Tensor gx = model.grad_x_phi({x.data(), 3}, y);
    Tensor wantx = testutil::fd_grad(
        [&](const Tensor& t) { return model.phi({t.data(), 3}, y); }, x);
    REQUIRE(testutil::max_rel_err(gx, wantx) <= 1e-5);

    Tensor gt = model.grad_theta_phi({x.data(), 3}, y);
    JointEnergy work = model;
    Tensor wantt = testutil::fd_grad(
        [&](const Tensor& t) {
          work.set_theta(t);
          return work.phi({x.data(), 3}, y);
        },
        model.get_theta());
    REQUIRE(testutil::max_rel_err(gt, wantt) <= 1e-5);
  }
}

TEST_CASE("theta round-trip through get/set") {
  Rng rng(41);
  AutoencoderEnergy model = random_ae(rng, 3, 2);
  Tensor theta = model.get_theta();
  theta[0] += 0.25;
  model.set_theta(theta);
  REQUIRE(model.get_theta()[0] == theta[0]);
  REQUIRE_THROWS_AS(model.set_theta(Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("energy target adapter exposes -phi as the log density") {
  Rng rng(43);
  AutoencoderEnergy model = random_ae(rng, 3, 2);
  EnergyTargetAdapter adapter(model);
  Tensor x = rng.normal_tensor({3});
  REQUIRE(adapter.log_density_unnormalized({x.data(), 3}) ==
          Approx(-model.phi({x.data(), 3})));
  REQUIRE(score_matches_fd(adapter, {x.data(), 3}, 1e-5, 1e-5));
}
