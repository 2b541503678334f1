#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "stein/dataset.hpp"
#include "stein/steingan.hpp"
#include "testutil.hpp"

using namespace stein;
using Catch::Approx;

namespace {

/// φ(x;θ) = θ·Σx_k: a single-parameter energy for hand-checked MLE gradients.
struct LinearEnergy : EnergyModel {
  double theta = 0.5;
  std::size_t d;
  explicit LinearEnergy(std::size_t d_) : d(d_) {}

  std::size_t dim() const override { return d; }
  std::size_t theta_count() const override { return 1; }

  std::vector<double> phi_batch(const Tensor& pts, const std::vector<int>*) const override {
    std::vector<double> out(pts.rows());
    for (std::size_t i = 0; i < pts.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += pts.at(i, j);
      out[i] = theta * s;
    }
    return out;
  }
  Tensor score_batch(const Tensor& pts, const std::vector<int>*,
                     std::vector<std::uint8_t>* flags) const override {
    if (flags) flags->assign(pts.rows(), 0);
    return Tensor::full({pts.rows(), d}, -theta);
  }
  Tensor grad_theta_phi_mean(const Tensor& pts, const std::vector<int>*) const override {
    double acc = 0.0;
    for (std::size_t i = 0; i < pts.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) acc += pts.at(i, j);
    return Tensor::wrap({1}, {acc / static_cast<double>(pts.rows())});
  }
  Tensor get_theta() const override { return Tensor::wrap({1}, {theta}); }
  void set_theta(const Tensor& t) override { theta = t[0]; }
  bool theta_finite() const override { return std::isfinite(theta); }
};

AutoencoderEnergy tiny_ae(Rng& rng, std::size_t d, std::size_t code) {
  std::vector<LayerSpec> es{{d, 8, Act::Tanh}, {8, code, Act::Identity}};
  std::vector<LayerSpec> ds{{code, 8, Act::Tanh}, {8, d, Act::Identity}};
  return AutoencoderEnergy(Mlp::init_gaussian(es, 0.2, rng),
                           Mlp::init_gaussian(ds, 0.2, rng));
}

}  // namespace

TEST_CASE("mle gradient: matched batches give exactly zero") {
  Rng rng(3);
  AutoencoderEnergy model = tiny_ae(rng, 2, 2);
  Tensor batch = testutil::random_input(rng, 10, 2);
  Tensor g = mle_theta_gradient(model, batch, batch);
  REQUIRE(g.max_abs() == 0.0);
}

TEST_CASE("mle gradient: hand value for the single-parameter energy") {
  LinearEnergy model(1);
  Tensor real = Tensor::wrap({2, 1}, {1.0, 3.0});  // mean 2
  Tensor fake = Tensor::wrap({2, 1}, {4.0, 6.0});  // mean 5
  Tensor g = mle_theta_gradient(model, real, fake);
  REQUIRE(g[0] == Approx(3.0));  // mean(fake) - mean(real)

  REQUIRE_THROWS_AS(mle_theta_gradient(model, real, Tensor::zeros({0, 1})),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(mle_theta_gradient(model, Tensor::zeros({0, 1}), fake),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(mle_theta_gradient(model, real, Tensor::zeros({2, 3})),
                    std::invalid_argument);
}

TEST_CASE("discounted gradient: gamma endpoints and bitwise gamma=0 equality") {
  LinearEnergy model(1);
  Rng rng(5);
  Tensor real = testutil::random_input(rng, 6, 1);
  Tensor fake = testutil::random_input(rng, 6, 1);

  Tensor plain = mle_theta_gradient(model, real, fake);
  Tensor g0 = mle_theta_gradient_discounted(model, real, fake, 0.0);
  REQUIRE(std::memcmp(plain.data(), g0.data(), sizeof(double)) == 0);

  Tensor g1 = mle_theta_gradient_discounted(model, real, fake, 1.0);
  Tensor real_term = model.grad_theta_phi_mean(real, nullptr);
  REQUIRE(g1[0] == Approx(-real_term[0]).margin(1e-15));

  REQUIRE_THROWS_AS(mle_theta_gradient_discounted(model, real, fake, -0.1),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(mle_theta_gradient_discounted(model, real, fake, 1.1),
                    std::invalid_argument);
  REQUIRE(SteinGanConfig{}.gamma == 0.7);
}

TEST_CASE("pacing: rule examples and the frozen-precedence table") {
  SteinGanConfig cfg;
  cfg.freeze_gap = 0.5;
  PacingState s;
  REQUIRE(pacing_update(s, 1.0, 0.8, cfg).mode == PacingMode::Fast);
  REQUIRE(pacing_update(s, 0.2, 1.0, cfg).mode == PacingMode::Frozen);
  REQUIRE(pacing_update(s, 0.7, 0.7, cfg).mode == PacingMode::Normal);
  REQUIRE_THROWS_AS(pacing_update(s, std::nan(""), 0.0, cfg), std::invalid_argument);

  Rng rng(7);
  for (int rep = 0; rep < 10000; ++rep) {
    double real = rng.uniform(-3.0, 3.0);
    double fake = rng.uniform(-3.0, 3.0);
    PacingState next = pacing_update(s, real, fake, cfg);
    PacingMode want;
    if (std::abs(real - fake) > cfg.freeze_gap) want = PacingMode::Frozen;
    else if (real > fake) want = PacingMode::Fast;
    else want = PacingMode::Normal;
    REQUIRE(next.mode == want);
    REQUIRE(next.last_real_energy == real);
    REQUIRE(next.last_fake_energy == fake);
  }
}

TEST_CASE("generator sampling: determinism, conditioning, contracts") {
  Rng rng(11);
  GeneratorSpec uncond{4, NoiseSource::Law::UniformPm1, 0};
  std::vector<LayerSpec> specs{{4, 8, Act::Tanh}, {8, 2, Act::Identity}};
  Mlp gen = Mlp::init_gaussian(specs, 0.3, rng);

  ParticleSet a = sample_generator(gen, uncond, 20, 5);
  ParticleSet b = sample_generator(gen, uncond, 20, 5);
  REQUIRE(testutil::max_abs_diff(a.positions, b.positions) == 0.0);
  REQUIRE_THROWS_AS(sample_generator(gen, uncond, 5, 1, 2), std::invalid_argument);

  GeneratorSpec cond{4, NoiseSource::Law::UniformPm1, 3};
  std::vector<LayerSpec> cspecs{{7, 8, Act::Tanh}, {8, 2, Act::Identity}};
  Mlp cgen = Mlp::init_gaussian(cspecs, 0.3, rng);
  ParticleSet c0 = sample_generator(cgen, cond, 10, 5, 0);
  ParticleSet c2 = sample_generator(cgen, cond, 10, 5, 2);
  REQUIRE(testutil::max_abs_diff(c0.positions, c2.positions) > 0.0);  // label matters
  REQUIRE_THROWS_AS(sample_generator(cgen, cond, 5, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(sample_generator(cgen, cond, 5, 1, 7), std::invalid_argument);
}

TEST_CASE("random-walk probe: small noise steps move outputs continuously") {
  Rng rng(13);
  std::vector<LayerSpec> specs{{4, 16, Act::Tanh}, {16, 2, Act::Identity}};
  Mlp gen = Mlp::init_gaussian(specs, 0.02, rng);
  GeneratorSpec spec{4, NoiseSource::Law::UniformPm1, 0};

  NoiseSource noise(4, NoiseSource::Law::UniformPm1, 1);
  Tensor xi = noise.draw(1);
  Tensor prev = gen.forward(xi);
  for (int step = 0; step < 50; ++step) {
    for (std::size_t j = 0; j < 4; ++j) xi[j] += 0.01 * noise.rng.uniform_pm1();
    Tensor cur = gen.forward(xi);
    double dist = std::sqrt(squared_distance(cur.row(0), prev.row(0)));
    REQUIRE(dist <= 0.05);  // tiny input steps cannot jump far through a smooth net
    prev = cur;
  }
}

TEST_CASE("steingan_train: smoke run, trace schema, determinism") {
  SynthSpec dspec;
  dspec.kind = SynthSpec::Kind::GaussianClusters;
  dspec.n = 200;
  dspec.seed = 1;
  Dataset ds = gen_synthetic(dspec);

  auto make = [&]() {
    Rng rng(17);
    AutoencoderEnergy model = tiny_ae(rng, 2, 2);
    std::vector<LayerSpec> gspecs{{8, 16, Act::Tanh}, {16, 2, Act::Identity}};
    Mlp gen = Mlp::init_gaussian(gspecs, 0.02, rng);
    SteinGanConfig cfg;
    cfg.batch = 16;
    cfg.noise_dim = 8;
    cfg.iterations = 25;
    cfg.seed = 99;
    SteinGanResult res = steingan_train(ds.samples, nullptr, gen, model, cfg);
    return res.trace.to_csv();
  };
  std::string a = make(), b = make();
  REQUIRE(a == b);
  REQUIRE(a.substr(0, a.find('\n')) ==
          "iter,mean_real_energy,mean_fake_energy,pacing_mode,bandwidth,gen_update_norm,"
          "theta_update_norm");
}

TEST_CASE("steingan_train: frozen-forever pacing decouples the energy model") {
  SynthSpec dspec;
  dspec.kind = SynthSpec::Kind::GaussianClusters;
  dspec.n = 100;
  dspec.seed = 2;
  Dataset ds = gen_synthetic(dspec);

  Rng rng(19);
  AutoencoderEnergy model = tiny_ae(rng, 2, 2);
  Tensor theta0 = model.get_theta();
  std::vector<LayerSpec> gspecs{{4, 8, Act::Tanh}, {8, 2, Act::Identity}};
  Mlp gen = Mlp::init_gaussian(gspecs, 0.02, rng);
  Mlp gen_copy = gen;

  SteinGanConfig cfg;
  cfg.batch = 12;
  cfg.noise_dim = 4;
  cfg.iterations = 15;
  cfg.seed = 5;
  cfg.gamma = 1.0;
  cfg.freeze_gap = 1e-12;  // any nonzero gap freezes θ
  SteinGanResult res = steingan_train(ds.samples, nullptr, gen, model, cfg);

  Tensor theta1 = model.get_theta();
  REQUIRE(std::memcmp(theta0.data(), theta1.data(), theta0.size() * sizeof(double)) == 0);
  for (const auto& row : res.trace.rows()) REQUIRE(row[3] == "frozen");

  // and the generator followed plain amortized updates against the fixed
  // energy: it must have moved
  REQUIRE(testutil::max_abs_diff(gen.flatten_params(), gen_copy.flatten_params()) > 0.0);
}

TEST_CASE("steingan_train: bandwidth column stays at or above the floor") {
  SynthSpec dspec;
  dspec.kind = SynthSpec::Kind::GaussianClusters;
  dspec.n = 100;
  dspec.seed = 3;
  Dataset ds = gen_synthetic(dspec);
  Rng rng(23);
  AutoencoderEnergy model = tiny_ae(rng, 2, 2);
  std::vector<LayerSpec> gspecs{{4, 8, Act::Tanh}, {8, 2, Act::Identity}};
  Mlp gen = Mlp::init_gaussian(gspecs, 0.02, rng);
  SteinGanConfig cfg;
  cfg.batch = 8;
  cfg.noise_dim = 4;
  cfg.iterations = 10;
  SteinGanResult res = steingan_train(ds.samples, nullptr, gen, model, cfg);
  for (const auto& row : res.trace.rows())
    REQUIRE(std::stod(row[4]) >= kBandwidthFloor);
}

TEST_CASE("steingan_train: input contracts") {
  Rng rng(29);
  AutoencoderEnergy model = tiny_ae(rng, 2, 2);
  std::vector<LayerSpec> gspecs{{4, 8, Act::Tanh}, {8, 2, Act::Identity}};
  Mlp gen = Mlp::init_gaussian(gspecs, 0.02, rng);
  SteinGanConfig cfg;
  cfg.noise_dim = 4;
  REQUIRE_THROWS_AS(steingan_train(Tensor::zeros({0, 2}), nullptr, gen, model, cfg),
                    std::invalid_argument);
  cfg.gamma = 1.5;
  Tensor data = testutil::random_input(rng, 10, 2);
  REQUIRE_THROWS_AS(steingan_train(data, nullptr, gen, model, cfg), std::invalid_argument);
}
