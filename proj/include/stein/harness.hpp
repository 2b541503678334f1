#pragma once

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stein/amortize.hpp"
#include "stein/config.hpp"
#include "stein/dataset.hpp"
#include "stein/energy.hpp"
#include "stein/errors.hpp"
#include "stein/io.hpp"
#include "stein/kernels.hpp"
#include "stein/mlp.hpp"
#include "stein/steingan.hpp"
#include "stein/svgd.hpp"

namespace stein {

namespace fs = std::filesystem;

struct RunOverrides {
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<bool> overwrite;
};

// ---------------------------------------------------------------------------
// Output directory management: append-only unless overwrite is set
// ---------------------------------------------------------------------------

inline void prepare_out_dir(const ExperimentConfig& cfg) {
  fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(cfg.out_dir + ": cannot create output directory (" + ec.message() + ")");
  if (fs::exists(dir / "trace.csv") && !cfg.overwrite)
    throw IoError(cfg.out_dir +
                  ": already holds run outputs; pass overwrite to replace them");
  // probe writability before any compute starts
  fs::path probe = dir / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw IoError(cfg.out_dir + ": output directory is not writable");
  }
  fs::remove(probe, ec);
}

// ---------------------------------------------------------------------------
// Mode runners
// ---------------------------------------------------------------------------

namespace harness_detail {

inline Tensor init_particles(const ParticleSpec& spec, std::size_t dim, Rng& rng) {
  Tensor pos = Tensor::zeros({spec.count, dim});
  for (std::size_t i = 0; i < spec.count; ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      double mu = 0.0;
      if (spec.init_mean.size() == 1) mu = spec.init_mean[0];
      else if (spec.init_mean.size() > j) mu = spec.init_mean[j];
      pos.at(i, j) = mu + spec.init_std * rng.normal();
    }
  return pos;
}

inline void write_resolved_config(const ExperimentConfig& cfg) {
  write_text_file((fs::path(cfg.out_dir) / "config_resolved.json").string(),
                  cfg.to_json().dump(2) + "\n");
}

inline void dump_generator_samples(const Mlp& gen, const GeneratorSpec& spec,
                                   const OutputCfg& out, const std::string& out_dir,
                                   std::uint64_t seed) {
  std::size_t n = out.sample_count;
  if (n == 0) return;
  Tensor stacked;
  if (spec.num_classes == 0) {
    stacked = sample_generator(gen, spec, n, seed).positions;
  } else {
    // cycle the labels so every class appears in the dump
    NoiseSource noise(spec.noise_dim, spec.law, seed);
    Tensor xi = noise.draw(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i)
      labels[i] = static_cast<int>(i % spec.num_classes);
    stacked = gen.forward(generator_inputs(spec, xi, &labels));
  }
  ParticleSet ps(stacked);
  fs::path dir(out_dir);
  if (out.image_shape) {
    write_samples(ps, out.image_shape, (dir / "samples.pgm").string());
  } else {
    write_samples(ps, std::nullopt, (dir / "samples.csv").string());
  }
}

}  // namespace harness_detail

inline void run_svgd_mode(const ExperimentConfig& cfg) {
  AnalyticTarget target = cfg.target->build();
  std::size_t d = target.dim();
  Rng init = Rng::substream(cfg.seed, "init");
  ParticleSet particles(harness_detail::init_particles(cfg.particles, d, init));
  SvgdConfig sc = cfg.svgd;
  sc.seed = cfg.seed;
  SvgdResult res = svgd_run(std::move(particles), target, sc);
  fs::path dir(cfg.out_dir);
  write_trace_csv(res.trace, (dir / "trace.csv").string());
  write_samples(res.particles, std::nullopt, (dir / "samples.csv").string());
}

inline void run_amortize_mode(const ExperimentConfig& cfg) {
  AnalyticTarget target = cfg.target->build();
  std::size_t d = target.dim();
  Rng init = Rng::substream(cfg.seed, "init");
  Mlp gen = cfg.generator.build(0, d, init);
  MetricTrace trace = amortize_train(gen, target, cfg.amortize, cfg.generator.noise_law,
                                     cfg.generator.noise_dim, cfg.seed);
  fs::path dir(cfg.out_dir);
  write_trace_csv(trace, (dir / "trace.csv").string());

  GeneratorSpec spec{cfg.generator.noise_dim, cfg.generator.noise_law, 0};
  Checkpoint ck;
  ck.nets.emplace("generator", gen);
  ck.scalars["noise_dim"] = static_cast<double>(spec.noise_dim);
  ck.scalars["num_classes"] = 0.0;
  ck.scalars["image_h"] = cfg.outputs.image_shape ? double(cfg.outputs.image_shape->h) : 0.0;
  ck.scalars["image_w"] = cfg.outputs.image_shape ? double(cfg.outputs.image_shape->w) : 0.0;
  ck.strings["noise_law"] = noise_law_name(spec.law);
  save_checkpoint(ck, (dir / "checkpoint.bin").string());

  harness_detail::dump_generator_samples(gen, spec, cfg.outputs, cfg.out_dir,
                                         Rng::derive_seed(cfg.seed, "sample"));
}

inline void run_steingan_mode(const ExperimentConfig& cfg) {
  Dataset ds = cfg.dataset->build(Rng::derive_seed(cfg.seed, "data-gen"));
  const bool conditional = cfg.energy.joint;
  if (conditional && !ds.has_labels())
    throw ConfigError("steingan: joint energy requires a labeled dataset");

  Rng init = Rng::substream(cfg.seed, "init");
  Mlp enc = cfg.energy.build_encoder(ds.dim(), init);
  Mlp dec = cfg.energy.build_decoder(ds.dim(), init);
  std::unique_ptr<AutoencoderEnergy> model;
  if (conditional) {
    Mlp head = cfg.energy.build_head(ds.num_classes, init);
    model = std::make_unique<JointEnergy>(std::move(enc), std::move(dec), std::move(head),
                                          cfg.energy.margin);
  } else {
    model = std::make_unique<AutoencoderEnergy>(std::move(enc), std::move(dec));
  }
  Mlp gen = cfg.generator.build(conditional ? ds.num_classes : 0, ds.dim(), init);

  SteinGanConfig sgc = cfg.steingan;
  sgc.noise_dim = cfg.generator.noise_dim;
  sgc.noise_law = cfg.generator.noise_law;
  sgc.seed = cfg.seed;

  GeneratorSpec spec{sgc.noise_dim, sgc.noise_law, conditional ? ds.num_classes : 0};
  fs::path dir(cfg.out_dir);

  auto make_checkpoint = [&](const SteinGanResult* result) {
    Checkpoint ck;
    ck.nets.emplace("generator", gen);
    ck.nets.emplace("encoder", model->encoder());
    ck.nets.emplace("decoder", model->decoder());
    if (conditional)
      ck.nets.emplace("head", static_cast<const JointEnergy&>(*model).head());
    if (result) {
      ck.optimizers.emplace("generator_adam", result->gen_opt);
      ck.optimizers.emplace("energy_adam", result->theta_opt);
    }
    ck.scalars["noise_dim"] = static_cast<double>(spec.noise_dim);
    ck.scalars["num_classes"] = static_cast<double>(spec.num_classes);
    ck.scalars["image_h"] = cfg.outputs.image_shape ? double(cfg.outputs.image_shape->h) : 0.0;
    ck.scalars["image_w"] = cfg.outputs.image_shape ? double(cfg.outputs.image_shape->w) : 0.0;
    ck.strings["noise_law"] = noise_law_name(spec.law);
    return ck;
  };

  SteinGanResult result;
  try {
    result = steingan_train(ds.samples, ds.has_labels() ? &ds.labels : nullptr, gen, *model,
                            sgc);
  } catch (const DivergenceError&) {
    save_checkpoint(make_checkpoint(nullptr), (dir / "checkpoint_abort.bin").string());
    throw;
  }

  write_trace_csv(result.trace, (dir / "trace.csv").string());
  save_checkpoint(make_checkpoint(&result), (dir / "checkpoint.bin").string());
  harness_detail::dump_generator_samples(gen, spec, cfg.outputs, cfg.out_dir,
                                         Rng::derive_seed(cfg.seed, "sample"));
}

// ---------------------------------------------------------------------------
// Built-in self tests (mode=check and the `check` subcommand)
// ---------------------------------------------------------------------------

inline bool run_self_checks(std::ostream& out) {
  struct Result {
    const char* name;
    bool ok;
  };
  std::vector<Result> rows;
  auto fd_scalar = [](auto f, Tensor at, double step = 1e-5) {
    Tensor g = Tensor::zeros(at.shape());
    for (std::size_t k = 0; k < at.size(); ++k) {
      double keep = at[k];
      at[k] = keep + step;
      double fp = f(at);
      at[k] = keep - step;
      double fm = f(at);
      at[k] = keep;
      g[k] = (fp - fm) / (2.0 * step);
    }
    return g;
  };
  auto rel_ok = [](const Tensor& a, const Tensor& b, double tol) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
      if (std::abs(a[i] - b[i]) / denom > tol) return false;
    }
    return true;
  };

  {  // network gradients vs finite differences
    bool ok = true;
    Rng rng(2024);
    for (int rep = 0; rep < 5 && ok; ++rep) {
      std::vector<LayerSpec> specs{{2, 5, Act::Tanh}, {5, 1, Act::Identity}};
      Mlp net = Mlp::init_gaussian(specs, 0.7, rng);
      Tensor x = rng.normal_tensor({1, 2});
      Tensor got = grad_wrt_params(net, x);
      Mlp work = net;
      Tensor theta = net.flatten_params();
      Tensor want = fd_scalar(
          [&](const Tensor& t) {
            work.set_params(t);
            return work.forward(x)[0];
          },
          theta);
      ok = rel_ok(got, want, 1e-5);
      if (ok) {
        Tensor gotx = grad_wrt_input(net, x);
        Tensor wantx = fd_scalar([&](const Tensor& t) { return net.forward(t)[0]; }, x);
        ok = rel_ok(gotx, wantx, 1e-5);
      }
    }
    rows.push_back({"network gradients vs central finite differences", ok});
  }

  {  // feature kernel gradient vs finite differences
    Rng rng(77);
    std::vector<LayerSpec> specs{{3, 4, Act::Tanh}, {4, 2, Act::Identity}};
    Mlp enc = Mlp::init_gaussian(specs, 0.6, rng);
    FeatureKernel k(0.8, &enc);
    Tensor x = rng.normal_tensor({3});
    Tensor x2 = rng.normal_tensor({3});
    Tensor got = k.grad_x({x.data(), 3}, {x2.data(), 3});
    Tensor want = fd_scalar(
        [&](const Tensor& t) { return k.eval({t.data(), 3}, {x2.data(), 3}); }, x);
    rows.push_back({"feature kernel spatial gradient vs finite differences",
                    rel_ok(got, want, 1e-5)});
  }

  {  // autoencoder energy gradients vs finite differences
    Rng rng(55);
    std::vector<LayerSpec> es{{4, 5, Act::Tanh}, {5, 3, Act::Identity}};
    std::vector<LayerSpec> dsp{{3, 5, Act::Tanh}, {5, 4, Act::Identity}};
    AutoencoderEnergy model(Mlp::init_gaussian(es, 0.5, rng),
                            Mlp::init_gaussian(dsp, 0.5, rng));
    Tensor x = rng.normal_tensor({4});
    Tensor gx = model.grad_x_phi({x.data(), 4});
    Tensor wantx =
        fd_scalar([&](const Tensor& t) { return model.phi({t.data(), 4}); }, x);
    bool ok = rel_ok(gx, wantx, 1e-5);
    if (ok) {
      Tensor gt = model.grad_theta_phi({x.data(), 4});
      Tensor theta = model.get_theta();
      AutoencoderEnergy work = model;
      Tensor wantt = fd_scalar(
          [&](const Tensor& t) {
            work.set_theta(t);
            return work.phi({x.data(), 4});
          },
          theta);
      ok = rel_ok(gt, wantt, 1e-5);
    }
    rows.push_back({"autoencoder energy gradients vs finite differences", ok});
  }

  {  // Stein identity Monte Carlo on N(0,1)
    AnalyticTarget p = AnalyticTarget::gaussian(Tensor::vec({0.0}), Tensor::vec({1.0}));
    Rng rng(31);
    int pass = 0;
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<LayerSpec> fs{{1, 4, Act::Tanh}, {4, 1, Act::Identity}};
      MlpVectorField f(Mlp::init_gaussian(fs, 0.8, rng));
      ParticleSet samples = sample_analytic(p, 10000, rng.bits());
      Tensor scores = p.grad_log_density_batch(samples.positions);
      Tensor vals = f.value_batch(samples.positions);
      std::vector<double> div = f.divergence_batch(samples.positions);
      double mean = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < samples.count(); ++i) {
        double v = scores.at(i, 0) * vals.at(i, 0) + div[i];
        mean += v;
        sq += v * v;
      }
      double n = static_cast<double>(samples.count());
      mean /= n;
      double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
      if (std::abs(mean) <= 4.0 * sd / std::sqrt(n)) ++pass;
    }
    rows.push_back({"Stein identity Monte Carlo residual (5 trials)", pass >= 4});
  }

  {  // single-particle reduction to plain gradient ascent
    AnalyticTarget p =
        AnalyticTarget::gaussian(Tensor::vec({1.0, -2.0}), Tensor::vec({0.5, 2.0}));
    Rng rng(8);
    bool ok = true;
    for (int rep = 0; rep < 10 && ok; ++rep) {
      Tensor x = rng.normal_tensor({1, 2});
      ParticleSet one(x);
      Tensor dir = svgd_direction(one, p, RbfKernel(0.7));
      Tensor score = p.grad_log_density(x.row(0));
      for (std::size_t j = 0; j < 2; ++j)
        if (std::abs(dir.at(0, j) - score[j]) > 1e-12) ok = false;
    }
    rows.push_back({"single-particle direction equals the score", ok});
  }

  {  // pacing rule table
    SteinGanConfig cfg;
    cfg.freeze_gap = 0.5;
    PacingState s;
    bool ok = pacing_update(s, 1.0, 0.8, cfg).mode == PacingMode::Fast &&
              pacing_update(s, 0.2, 1.0, cfg).mode == PacingMode::Frozen &&
              pacing_update(s, 0.7, 0.7, cfg).mode == PacingMode::Normal &&
              pacing_update(s, 2.0, 1.0, cfg).mode == PacingMode::Frozen;
    rows.push_back({"pacing controller rule table", ok});
  }

  bool all = true;
  for (const Result& r : rows) {
    out << (r.ok ? "[ ok ] " : "[FAIL] ") << r.name << "\n";
    all = all && r.ok;
  }
  out << (all ? "all checks passed\n" : "some checks FAILED\n");
  return all;
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

inline void run_experiment(const ExperimentConfig& cfg) {
  if (cfg.mode == ExperimentConfig::Mode::Check) {
    if (!run_self_checks(std::cout)) throw std::runtime_error("self checks failed");
    return;
  }
  prepare_out_dir(cfg);
  harness_detail::write_resolved_config(cfg);
  switch (cfg.mode) {
    case ExperimentConfig::Mode::Svgd: run_svgd_mode(cfg); break;
    case ExperimentConfig::Mode::Amortize: run_amortize_mode(cfg); break;
    case ExperimentConfig::Mode::SteinGan: run_steingan_mode(cfg); break;
    case ExperimentConfig::Mode::Check: break;
  }
}

/// Exit codes: 0 success, 1 IO/other, 2 config, 3 numeric guard.
inline int run(const std::string& config_path, const RunOverrides& ov = {},
               std::ostream& log = std::cerr) {
  try {
    ExperimentConfig cfg = ExperimentConfig::load(config_path);
    if (ov.out_dir) cfg.out_dir = *ov.out_dir;
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.overwrite) cfg.overwrite = *ov.overwrite;
    run_experiment(cfg);
    return 0;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    log << "numeric guard tripped: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

/// `sample` subcommand: draw from a checkpointed generator.
inline void sample_from_checkpoint(const std::string& ckpt_path, std::size_t n,
                                   std::uint64_t seed, std::optional<int> label,
                                   const std::string& out_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  auto it = ck.nets.find("generator");
  if (it == ck.nets.end()) throw IoError(ckpt_path + ": no generator net in checkpoint");
  GeneratorSpec spec;
  spec.noise_dim = static_cast<std::size_t>(ck.scalars.at("noise_dim"));
  spec.num_classes = static_cast<std::size_t>(ck.scalars.at("num_classes"));
  spec.law = noise_law_from_name(ck.strings.at("noise_law"));
  ParticleSet ps = sample_generator(it->second, spec, n, seed, label);
  std::size_t h = static_cast<std::size_t>(ck.scalars.count("image_h") ? ck.scalars.at("image_h") : 0);
  std::size_t w = static_cast<std::size_t>(ck.scalars.count("image_w") ? ck.scalars.at("image_w") : 0);
  if (h > 0 && w > 0 && h * w == ps.dim()) {
    write_samples(ps, ImageShape{h, w}, out_path);
  } else {
    write_samples(ps, std::nullopt, out_path);
  }
}

}  // namespace stein
