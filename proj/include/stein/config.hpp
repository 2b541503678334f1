#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "stein/amortize.hpp"
#include "stein/dataset.hpp"
#include "stein/energy.hpp"
#include "stein/errors.hpp"
#include "stein/io.hpp"
#include "stein/kernels.hpp"
#include "stein/steingan.hpp"
#include "stein/svgd.hpp"

namespace stein {

using json = nlohmann::json;

namespace cfg_detail {

/// Rejects keys outside the allowed set, naming every offender.
inline void check_keys(const json& obj, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  std::string offenders;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!ok.count(it.key())) {
      if (!offenders.empty()) offenders += ", ";
      offenders += it.key();
    }
  }
  if (!offenders.empty())
    throw ConfigError(where + ": unknown key(s): " + offenders);
}

inline double num(const json& obj, const std::string& where, const char* key, double dflt) {
  if (!obj.contains(key)) return dflt;
  if (!obj[key].is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return obj[key].get<double>();
}

inline double num_req(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) throw ConfigError(where + "." + key + ": required");
  if (!obj[key].is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return obj[key].get<double>();
}

inline std::string str(const json& obj, const std::string& where, const char* key,
                       const std::string& dflt) {
  if (!obj.contains(key)) return dflt;
  if (!obj[key].is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return obj[key].get<std::string>();
}

inline std::string str_req(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) throw ConfigError(where + "." + key + ": required");
  if (!obj[key].is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return obj[key].get<std::string>();
}

inline bool boolean(const json& obj, const std::string& where, const char* key, bool dflt) {
  if (!obj.contains(key)) return dflt;
  if (!obj[key].is_boolean()) throw ConfigError(where + "." + key + ": expected a bool");
  return obj[key].get<bool>();
}

inline std::vector<double> num_list(const json& obj, const std::string& where,
                                    const char* key) {
  if (!obj.contains(key)) return {};
  if (!obj[key].is_array()) throw ConfigError(where + "." + key + ": expected an array");
  std::vector<double> v;
  for (const auto& e : obj[key]) {
    if (!e.is_number()) throw ConfigError(where + "." + key + ": expected numbers");
    v.push_back(e.get<double>());
  }
  return v;
}

inline std::vector<std::size_t> size_list(const json& obj, const std::string& where,
                                          const char* key,
                                          std::vector<std::size_t> dflt = {}) {
  if (!obj.contains(key)) return dflt;
  std::vector<std::size_t> v;
  for (double d : num_list(obj, where, key)) v.push_back(static_cast<std::size_t>(d));
  return v;
}

inline BandwidthPolicy bandwidth(const json& obj, const std::string& where, const char* key,
                                 BandwidthPolicy dflt) {
  if (!obj.contains(key)) return dflt;
  const json& b = obj[key];
  std::string w = where + "." + key;
  check_keys(b, w, {"policy", "scale", "value"});
  std::string policy = str_req(b, w, "policy");
  if (policy == "median") return BandwidthPolicy::median(num(b, w, "scale", 0.5));
  if (policy == "fixed") return BandwidthPolicy::fixed(num_req(b, w, "value"));
  throw ConfigError(w + ".policy: expected \"median\" or \"fixed\"");
}

inline json bandwidth_json(const BandwidthPolicy& p) {
  if (p.kind == BandwidthPolicy::Kind::Fixed)
    return json{{"policy", "fixed"}, {"value", p.value}};
  return json{{"policy", "median"}, {"scale", p.value}};
}

}  // namespace cfg_detail

// ---------------------------------------------------------------------------
// Sub-specs
// ---------------------------------------------------------------------------

struct TargetSpec {
  AnalyticTarget::Component single;  // gaussian
  std::vector<AnalyticTarget::Component> components;
  bool is_gmm = false;

  AnalyticTarget build() const {
    if (is_gmm) return AnalyticTarget::gmm(components);
    return AnalyticTarget::gaussian(single.mean, single.var);
  }
  std::size_t dim() const { return is_gmm ? components[0].mean.size() : single.mean.size(); }
};

struct ParticleSpec {
  std::size_t count = 100;
  std::vector<double> init_mean;  // broadcast scalar allowed via 1 entry
  double init_std = 1.0;
};

struct GeneratorCfg {
  std::size_t noise_dim = 100;
  NoiseSource::Law noise_law = NoiseSource::Law::UniformPm1;
  std::vector<std::size_t> hidden{64};
  Act hidden_act = Act::Tanh;
  Act out_act = Act::Identity;
  double init_std = 0.02;

  Mlp build(std::size_t in_extra, std::size_t out_dim, Rng& rng) const {
    std::vector<LayerSpec> specs;
    std::size_t prev = noise_dim + in_extra;
    for (std::size_t h : hidden) {
      specs.push_back({prev, h, hidden_act});
      prev = h;
    }
    specs.push_back({prev, out_dim, out_act});
    return Mlp::init_gaussian(specs, init_std, rng);
  }
};

struct EnergyCfg {
  bool joint = false;
  std::size_t code_dim = 8;
  std::vector<std::size_t> enc_hidden{32};
  std::vector<std::size_t> dec_hidden{32};
  Act act = Act::Tanh;
  Act dec_out_act = Act::Identity;
  double margin = 0.2;
  double init_std = 0.02;

  Mlp build_encoder(std::size_t data_dim, Rng& rng) const {
    std::vector<LayerSpec> specs;
    std::size_t prev = data_dim;
    for (std::size_t h : enc_hidden) {
      specs.push_back({prev, h, act});
      prev = h;
    }
    specs.push_back({prev, code_dim, Act::Identity});
    return Mlp::init_gaussian(specs, init_std, rng);
  }

  Mlp build_decoder(std::size_t data_dim, Rng& rng) const {
    std::vector<LayerSpec> specs;
    std::size_t prev = code_dim;
    for (std::size_t h : dec_hidden) {
      specs.push_back({prev, h, act});
      prev = h;
    }
    specs.push_back({prev, data_dim, dec_out_act});
    return Mlp::init_gaussian(specs, init_std, rng);
  }

  Mlp build_head(std::size_t num_classes, Rng& rng) const {
    std::vector<LayerSpec> specs{{code_dim, num_classes, Act::Identity}};
    return Mlp::init_gaussian(specs, init_std, rng);
  }
};

struct DatasetCfg {
  enum class Kind { GaussianClusters, TwoMoons, Glyphs, Idx };
  Kind kind = Kind::GaussianClusters;
  SynthSpec synth;
  std::string images, labels;
  std::size_t downsample_to = 0;

  Dataset build(std::uint64_t seed) const {
    if (kind == Kind::Idx) return load_idx(images, labels, downsample_to);
    SynthSpec s = synth;
    s.seed = seed;
    return gen_synthetic(s);
  }
};

struct OutputCfg {
  std::size_t sample_count = 64;
  std::optional<ImageShape> image_shape;
};

// ---------------------------------------------------------------------------
// Experiment config
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  enum class Mode { Svgd, Amortize, SteinGan, Check };

  Mode mode = Mode::Check;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  bool overwrite = false;

  std::optional<TargetSpec> target;
  std::optional<DatasetCfg> dataset;
  ParticleSpec particles;
  GeneratorCfg generator;
  EnergyCfg energy;
  SvgdConfig svgd;
  AmortizeConfig amortize;
  SteinGanConfig steingan;
  OutputCfg outputs;

  static ExperimentConfig parse(const json& root);
  static ExperimentConfig load(const std::string& path) {
    json root;
    try {
      root = json::parse(read_text_file(path), nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ": " + e.what());
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
    return parse(root);
  }

  json to_json() const;
};

inline const char* mode_name(ExperimentConfig::Mode m) {
  switch (m) {
    case ExperimentConfig::Mode::Svgd: return "svgd";
    case ExperimentConfig::Mode::Amortize: return "amortize";
    case ExperimentConfig::Mode::SteinGan: return "steingan";
    case ExperimentConfig::Mode::Check: return "check";
  }
  return "check";
}

inline ExperimentConfig ExperimentConfig::parse(const json& root) {
  using namespace cfg_detail;
  check_keys(root, "config",
             {"mode", "seed", "out_dir", "overwrite", "target", "dataset", "particles",
              "generator", "energy", "svgd", "amortize", "steingan", "outputs"});
  ExperimentConfig c;
  std::string mode = str_req(root, "config", "mode");
  if (mode == "svgd") c.mode = Mode::Svgd;
  else if (mode == "amortize") c.mode = Mode::Amortize;
  else if (mode == "steingan") c.mode = Mode::SteinGan;
  else if (mode == "check") c.mode = Mode::Check;
  else throw ConfigError("config.mode: expected svgd|amortize|steingan|check, got " + mode);

  c.seed = static_cast<std::uint64_t>(num(root, "config", "seed", 0));
  c.out_dir = str(root, "config", "out_dir", "out");
  c.overwrite = boolean(root, "config", "overwrite", false);

  if (root.contains("target")) {
    const json& t = root["target"];
    check_keys(t, "target", {"kind", "mean", "var", "components"});
    TargetSpec ts;
    std::string kind = str_req(t, "target", "kind");
    if (kind == "gaussian") {
      ts.is_gmm = false;
      std::vector<double> mean = num_list(t, "target", "mean");
      std::vector<double> var = num_list(t, "target", "var");
      if (mean.empty() || mean.size() != var.size())
        throw ConfigError("target: mean and var must be equal-length non-empty arrays");
      ts.single = {1.0, Tensor::vec(mean), Tensor::vec(var)};
    } else if (kind == "gmm") {
      ts.is_gmm = true;
      if (!t.contains("components") || !t["components"].is_array() ||
          t["components"].empty())
        throw ConfigError("target.components: required non-empty array for gmm");
      for (const auto& comp : t["components"]) {
        check_keys(comp, "target.components[]", {"weight", "mean", "var"});
        std::vector<double> mean = num_list(comp, "target.components[]", "mean");
        std::vector<double> var = num_list(comp, "target.components[]", "var");
        double w = num_req(comp, "target.components[]", "weight");
        if (mean.empty() || mean.size() != var.size())
          throw ConfigError("target.components[]: mean/var length mismatch");
        ts.components.push_back({w, Tensor::vec(mean), Tensor::vec(var)});
      }
    } else {
      throw ConfigError("target.kind: expected gaussian|gmm");
    }
    c.target = std::move(ts);
  }

  if (root.contains("dataset")) {
    const json& d = root["dataset"];
    check_keys(d, "dataset",
               {"kind", "n", "centers", "sigma", "moon_noise", "class_freq", "glyph_noise",
                "images", "labels", "downsample_to"});
    DatasetCfg dc;
    std::string kind = str_req(d, "dataset", "kind");
    if (kind == "gaussian_clusters") dc.kind = DatasetCfg::Kind::GaussianClusters;
    else if (kind == "two_moons") dc.kind = DatasetCfg::Kind::TwoMoons;
    else if (kind == "glyphs") dc.kind = DatasetCfg::Kind::Glyphs;
    else if (kind == "idx") dc.kind = DatasetCfg::Kind::Idx;
    else throw ConfigError("dataset.kind: expected gaussian_clusters|two_moons|glyphs|idx");

    dc.synth.kind = dc.kind == DatasetCfg::Kind::TwoMoons ? SynthSpec::Kind::TwoMoons
                    : dc.kind == DatasetCfg::Kind::Glyphs ? SynthSpec::Kind::Glyphs
                                                          : SynthSpec::Kind::GaussianClusters;
    dc.synth.n = static_cast<std::size_t>(num(d, "dataset", "n", 1000));
    if (d.contains("centers")) {
      dc.synth.centers.clear();
      for (const auto& row : d["centers"]) {
        std::vector<double> center;
        for (const auto& v : row) center.push_back(v.get<double>());
        dc.synth.centers.push_back(std::move(center));
      }
    }
    dc.synth.sigma = num(d, "dataset", "sigma", 0.3);
    dc.synth.moon_noise = num(d, "dataset", "moon_noise", 0.1);
    dc.synth.glyph_noise = num(d, "dataset", "glyph_noise", 0.1);
    dc.synth.class_freq = num_list(d, "dataset", "class_freq");
    dc.images = str(d, "dataset", "images", "");
    dc.labels = str(d, "dataset", "labels", "");
    dc.downsample_to = static_cast<std::size_t>(num(d, "dataset", "downsample_to", 0));
    if (dc.kind == DatasetCfg::Kind::Idx && dc.images.empty())
      throw ConfigError("dataset.images: required for idx datasets");
    c.dataset = std::move(dc);
  }

  if (root.contains("particles")) {
    const json& p = root["particles"];
    check_keys(p, "particles", {"count", "init_mean", "init_std"});
    c.particles.count = static_cast<std::size_t>(num(p, "particles", "count", 100));
    c.particles.init_mean = num_list(p, "particles", "init_mean");
    c.particles.init_std = num(p, "particles", "init_std", 1.0);
  }

  if (root.contains("generator")) {
    const json& g = root["generator"];
    check_keys(g, "generator",
               {"noise_dim", "noise_law", "hidden", "hidden_act", "out_act", "init_std"});
    c.generator.noise_dim = static_cast<std::size_t>(num(g, "generator", "noise_dim", 100));
    c.generator.noise_law =
        noise_law_from_name(str(g, "generator", "noise_law", "uniform_pm1"));
    c.generator.hidden = size_list(g, "generator", "hidden", {64});
    c.generator.hidden_act = act_from_name(str(g, "generator", "hidden_act", "tanh"));
    c.generator.out_act = act_from_name(str(g, "generator", "out_act", "identity"));
    c.generator.init_std = num(g, "generator", "init_std", 0.02);
  }

  if (root.contains("energy")) {
    const json& e = root["energy"];
    check_keys(e, "energy",
               {"kind", "code_dim", "enc_hidden", "dec_hidden", "act", "dec_out_act",
                "margin", "init_std"});
    std::string kind = str(e, "energy", "kind", "autoencoder");
    if (kind == "autoencoder") c.energy.joint = false;
    else if (kind == "joint") c.energy.joint = true;
    else throw ConfigError("energy.kind: expected autoencoder|joint");
    c.energy.code_dim = static_cast<std::size_t>(num(e, "energy", "code_dim", 8));
    c.energy.enc_hidden = size_list(e, "energy", "enc_hidden", {32});
    c.energy.dec_hidden = size_list(e, "energy", "dec_hidden", {32});
    c.energy.act = act_from_name(str(e, "energy", "act", "tanh"));
    c.energy.dec_out_act = act_from_name(str(e, "energy", "dec_out_act", "identity"));
    c.energy.margin = num(e, "energy", "margin", 0.2);
    c.energy.init_std = num(e, "energy", "init_std", 0.02);
  }

  if (root.contains("svgd")) {
    const json& s = root["svgd"];
    check_keys(s, "svgd", {"step", "iterations", "bandwidth", "adagrad"});
    c.svgd.step = num(s, "svgd", "step", 0.05);
    c.svgd.iterations = static_cast<std::size_t>(num(s, "svgd", "iterations", 1000));
    c.svgd.bandwidth = bandwidth(s, "svgd", "bandwidth", BandwidthPolicy::median(1.0));
    c.svgd.use_adagrad = boolean(s, "svgd", "adagrad", false);
  }

  if (root.contains("amortize")) {
    const json& a = root["amortize"];
    check_keys(a, "amortize",
               {"rule", "batch", "step", "inner_fit_steps", "ridge", "iterations",
                "bandwidth", "use_optimizer", "adam_lr", "eta_steps_per_theta"});
    c.amortize.rule = amortize_rule_from_name(str(a, "amortize", "rule", "chain_rule"));
    c.amortize.batch = static_cast<std::size_t>(num(a, "amortize", "batch", 100));
    c.amortize.step = num(a, "amortize", "step", 0.1);
    c.amortize.inner_fit_steps =
        static_cast<int>(num(a, "amortize", "inner_fit_steps", 5));
    c.amortize.ridge = num(a, "amortize", "ridge", 1e-6);
    c.amortize.iterations = static_cast<std::size_t>(num(a, "amortize", "iterations", 1000));
    c.amortize.bandwidth = bandwidth(a, "amortize", "bandwidth", BandwidthPolicy::median(0.5));
    c.amortize.use_optimizer = boolean(a, "amortize", "use_optimizer", true);
    c.amortize.adam_lr = num(a, "amortize", "adam_lr", 1e-3);
    c.amortize.eta_steps_per_theta =
        static_cast<int>(num(a, "amortize", "eta_steps_per_theta", 1));
  }

  if (root.contains("steingan")) {
    const json& s = root["steingan"];
    check_keys(s, "steingan",
               {"gamma", "gen_lr", "energy_lr", "energy_lr_fast", "freeze_gap", "batch",
                "eta_steps_per_theta", "kernel_scale", "iterations", "gen_rule", "gen_step",
                "inner_fit_steps", "ridge"});
    c.steingan.gamma = num(s, "steingan", "gamma", 0.7);
    c.steingan.gen_lr = num(s, "steingan", "gen_lr", 0.001);
    c.steingan.energy_lr = num(s, "steingan", "energy_lr", 0.0001);
    c.steingan.energy_lr_fast = num(s, "steingan", "energy_lr_fast", 0.0005);
    c.steingan.freeze_gap = num(s, "steingan", "freeze_gap", 0.5);
    c.steingan.batch = static_cast<std::size_t>(num(s, "steingan", "batch", 100));
    c.steingan.eta_steps_per_theta =
        static_cast<int>(num(s, "steingan", "eta_steps_per_theta", 1));
    c.steingan.kernel_scale = num(s, "steingan", "kernel_scale", 0.5);
    c.steingan.iterations = static_cast<std::size_t>(num(s, "steingan", "iterations", 1000));
    c.steingan.gen_rule = amortize_rule_from_name(str(s, "steingan", "gen_rule", "chain_rule"));
    c.steingan.gen_step = num(s, "steingan", "gen_step", 0.1);
    c.steingan.inner_fit_steps = static_cast<int>(num(s, "steingan", "inner_fit_steps", 5));
    c.steingan.ridge = num(s, "steingan", "ridge", 1e-6);
  }

  if (root.contains("outputs")) {
    const json& o = root["outputs"];
    check_keys(o, "outputs", {"sample_count", "image_shape"});
    c.outputs.sample_count = static_cast<std::size_t>(num(o, "outputs", "sample_count", 64));
    if (o.contains("image_shape")) {
      std::vector<double> hw = num_list(o, "outputs", "image_shape");
      if (hw.size() != 2) throw ConfigError("outputs.image_shape: expected [h, w]");
      c.outputs.image_shape =
          ImageShape{static_cast<std::size_t>(hw[0]), static_cast<std::size_t>(hw[1])};
    }
  }

  // mode-specific required sections
  if (c.mode == Mode::Svgd || c.mode == Mode::Amortize) {
    if (!c.target) throw ConfigError("config: target section required for this mode");
  }
  if (c.mode == Mode::SteinGan) {
    if (!c.dataset) throw ConfigError("config: dataset section required for steingan mode");
  }
  return c;
}

inline json ExperimentConfig::to_json() const {
  using namespace cfg_detail;
  json root;
  root["mode"] = mode_name(mode);
  root["seed"] = seed;
  root["out_dir"] = out_dir;
  root["overwrite"] = overwrite;

  if (target) {
    json t;
    if (target->is_gmm) {
      t["kind"] = "gmm";
      json comps = json::array();
      for (const auto& comp : target->components) {
        json jc;
        jc["weight"] = comp.weight;
        jc["mean"] = std::vector<double>(comp.mean.data(), comp.mean.data() + comp.mean.size());
        jc["var"] = std::vector<double>(comp.var.data(), comp.var.data() + comp.var.size());
        comps.push_back(jc);
      }
      t["components"] = comps;
    } else {
      t["kind"] = "gaussian";
      t["mean"] = std::vector<double>(target->single.mean.data(),
                                      target->single.mean.data() + target->single.mean.size());
      t["var"] = std::vector<double>(target->single.var.data(),
                                     target->single.var.data() + target->single.var.size());
    }
    root["target"] = t;
  }

  if (dataset) {
    json d;
    switch (dataset->kind) {
      case DatasetCfg::Kind::GaussianClusters: d["kind"] = "gaussian_clusters"; break;
      case DatasetCfg::Kind::TwoMoons: d["kind"] = "two_moons"; break;
      case DatasetCfg::Kind::Glyphs: d["kind"] = "glyphs"; break;
      case DatasetCfg::Kind::Idx: d["kind"] = "idx"; break;
    }
    d["n"] = dataset->synth.n;
    d["centers"] = dataset->synth.centers;
    d["sigma"] = dataset->synth.sigma;
    d["moon_noise"] = dataset->synth.moon_noise;
    d["glyph_noise"] = dataset->synth.glyph_noise;
    if (!dataset->synth.class_freq.empty()) d["class_freq"] = dataset->synth.class_freq;
    if (!dataset->images.empty()) d["images"] = dataset->images;
    if (!dataset->labels.empty()) d["labels"] = dataset->labels;
    if (dataset->downsample_to) d["downsample_to"] = dataset->downsample_to;
    root["dataset"] = d;
  }

  root["particles"] = {{"count", particles.count},
                       {"init_mean", particles.init_mean},
                       {"init_std", particles.init_std}};
  root["generator"] = {{"noise_dim", generator.noise_dim},
                       {"noise_law", noise_law_name(generator.noise_law)},
                       {"hidden", generator.hidden},
                       {"hidden_act", act_name(generator.hidden_act)},
                       {"out_act", act_name(generator.out_act)},
                       {"init_std", generator.init_std}};
  root["energy"] = {{"kind", energy.joint ? "joint" : "autoencoder"},
                    {"code_dim", energy.code_dim},
                    {"enc_hidden", energy.enc_hidden},
                    {"dec_hidden", energy.dec_hidden},
                    {"act", act_name(energy.act)},
                    {"dec_out_act", act_name(energy.dec_out_act)},
                    {"margin", energy.margin},
                    {"init_std", energy.init_std}};
  root["svgd"] = {{"step", svgd.step},
                  {"iterations", svgd.iterations},
                  {"bandwidth", bandwidth_json(svgd.bandwidth)},
                  {"adagrad", svgd.use_adagrad}};
  root["amortize"] = {{"rule", amortize_rule_name(amortize.rule)},
                      {"batch", amortize.batch},
                      {"step", amortize.step},
                      {"inner_fit_steps", amortize.inner_fit_steps},
                      {"ridge", amortize.ridge},
                      {"iterations", amortize.iterations},
                      {"bandwidth", bandwidth_json(amortize.bandwidth)},
                      {"use_optimizer", amortize.use_optimizer},
                      {"adam_lr", amortize.adam_lr},
                      {"eta_steps_per_theta", amortize.eta_steps_per_theta}};
  root["steingan"] = {{"gamma", steingan.gamma},
                      {"gen_lr", steingan.gen_lr},
                      {"energy_lr", steingan.energy_lr},
                      {"energy_lr_fast", steingan.energy_lr_fast},
                      {"freeze_gap", steingan.freeze_gap},
                      {"batch", steingan.batch},
                      {"eta_steps_per_theta", steingan.eta_steps_per_theta},
                      {"kernel_scale", steingan.kernel_scale},
                      {"iterations", steingan.iterations},
                      {"gen_rule", amortize_rule_name(steingan.gen_rule)},
                      {"gen_step", steingan.gen_step},
                      {"inner_fit_steps", steingan.inner_fit_steps},
                      {"ridge", steingan.ridge}};
  json o;
  o["sample_count"] = outputs.sample_count;
  if (outputs.image_shape)
    o["image_shape"] = std::vector<std::size_t>{outputs.image_shape->h, outputs.image_shape->w};
  root["outputs"] = o;
  return root;
}

}  // namespace stein
