#pragma once

#include "gpstep/certificate.hpp"
#include "gpstep/csv.hpp"
#include "gpstep/error_bounds.hpp"
#include "gpstep/manifest.hpp"
#include "gpstep/svg.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace gpstep {

namespace fs = std::filesystem;

struct PipelineContext {
  RunConfig cfg;
  json raw_config;
  std::string out_dir;
  StageHashes hashes;
  RunManifest manifest;
  bool force = false;
  std::ostream* log = &std::cout;
};

inline PipelineContext make_pipeline_context(const std::string& config_path,
                                             const std::optional<std::string>& out_override,
                                             const std::optional<std::uint64_t>& seed_override,
                                             bool force) {
  PipelineContext ctx;
  {
    std::ifstream f(config_path);
    if (!f) throw ConfigError("cannot open config file: " + config_path);
    try {
      f >> ctx.raw_config;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
  }
  ctx.cfg = parse_config(ctx.raw_config);
  const auto dir = fs::path(config_path).parent_path();
  if (!fs::path(ctx.cfg.output).is_absolute())
    ctx.cfg.output = (dir / ctx.cfg.output).lexically_normal().string();
  if (out_override) ctx.cfg.output = *out_override;
  if (seed_override) ctx.cfg.seed = *seed_override;
  ctx.out_dir = ctx.cfg.output;
  ctx.hashes = StageHashes::compute(ctx.raw_config, ctx.cfg.seed);
  fs::create_directories(ctx.out_dir);
  ctx.manifest = RunManifest::load(ctx.out_dir);
  ctx.force = force;
  return ctx;
}

namespace detail {

inline std::string rel_dataset_path(int subsystem) {
  return "datasets/subsystem_" + std::to_string(subsystem) + ".csv";
}
inline std::string rel_model_path(int subsystem) {
  return "models/subsystem_" + std::to_string(subsystem) + ".json";
}

inline std::string join(const std::string& out_dir, const std::string& rel) {
  return (fs::path(out_dir) / rel).string();
}

inline bool outputs_exist(const std::string& out_dir, const std::vector<std::string>& rels) {
  for (const auto& r : rels)
    if (!fs::exists(join(out_dir, r))) return false;
  return true;
}

inline bool stage_is_current(const PipelineContext& ctx, const std::string& stage,
                             const std::string& hash, const std::vector<std::string>& outputs) {
  if (ctx.force) return false;
  const auto& stages = ctx.manifest.data.at("stages");
  if (!stages.contains(stage)) return false;
  const auto& s = stages.at(stage);
  if (!s.contains("hash") || s.at("hash").get<std::string>() != hash) return false;
  return outputs_exist(ctx.out_dir, outputs);
}

inline json vec_to_json(const VecX& v) {
  json a = json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline VecX vec_from_json(const json& a) {
  VecX v(static_cast<long>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<long>(i)] = a[i].get<double>();
  return v;
}

inline json mat_to_json(const MatX& m) {
  json rows = json::array();
  for (long r = 0; r < m.rows(); ++r) rows.push_back(vec_to_json(m.row(r).transpose()));
  return rows;
}

inline MatX mat_from_json(const json& rows) {
  const long nr = static_cast<long>(rows.size());
  if (nr == 0) return MatX(0, 0);
  const long nc = static_cast<long>(rows[0].size());
  MatX m(nr, nc);
  for (long r = 0; r < nr; ++r)
    for (long c = 0; c < nc; ++c) m(r, c) = rows[r][c].get<double>();
  return m;
}

inline json kernel_to_json(const SeKernelParams& k) {
  json j;
  j["signal_std"] = k.signal_std;
  j["length_scales"] = vec_to_json(k.length_scales);
  return j;
}

inline SeKernelParams kernel_from_json(const json& j) {
  SeKernelParams k;
  k.signal_std = j.at("signal_std").get<double>();
  k.length_scales = vec_from_json(j.at("length_scales"));
  return k;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: training data.

inline bool run_generate_data(PipelineContext& ctx) {
  const StrictFeedbackSystem sys = ctx.cfg.make_system();
  std::vector<std::string> outputs;
  for (int i = 1; i <= sys.num_subsystems; ++i) outputs.push_back(detail::rel_dataset_path(i));
  if (detail::stage_is_current(ctx, "generate-data", ctx.hashes.generate_data, outputs)) {
    *ctx.log << "[generate-data] up to date, skipping\n";
    return false;
  }
  check_input_gain_invertible(sys, 5);
  fs::create_directories(detail::join(ctx.out_dir, "datasets"));

  DataGenConfig dcfg = ctx.cfg.data;
  dcfg.seed = rng::derive(ctx.cfg.seed, detail::fnv1a("generate-data"));
  json values;
  values["noise_std"] = dcfg.noise_std;
  values["samples"] = dcfg.samples;
  values["seed"] = dcfg.seed;
  for (int i = 1; i <= sys.num_subsystems; ++i) {
    const Dataset ds = generate_dataset(sys, i, dcfg);
    csv::write_dataset(detail::join(ctx.out_dir, detail::rel_dataset_path(i)), ds);
    *ctx.log << "[generate-data] subsystem " << i << ": " << ds.size() << " samples\n";
  }
  ctx.manifest.record_stage("generate-data", ctx.hashes.generate_data, outputs, values);
  ctx.manifest.save(ctx.out_dir);
  return true;
}

// ---------------------------------------------------------------------------
// Stage 2: GP training.

inline GpModel load_model(const PipelineContext& ctx, int subsystem) {
  const std::string path = detail::join(ctx.out_dir, detail::rel_model_path(subsystem));
  std::ifstream f(path);
  if (!f) throw ConfigError("missing model file (run `train` first): " + path);
  json j;
  f >> j;
  const Dataset ds = csv::read_dataset(detail::join(ctx.out_dir, j.at("dataset").get<std::string>()),
                                       j.at("noise_std").get<double>());
  std::vector<SeKernelParams> kernels;
  for (const auto& k : j.at("kernels")) kernels.push_back(detail::kernel_from_json(k));
  GpModel model = fit(ds, kernels);
  const StrictFeedbackSystem sys = ctx.cfg.make_system();
  model.domain = sys.domain.head(subsystem * sys.block_dim);
  return model;
}

inline bool run_train(PipelineContext& ctx) {
  const StrictFeedbackSystem sys = ctx.cfg.make_system();
  const int h = sys.num_subsystems;
  std::vector<std::string> outputs;
  for (int i = 1; i <= h; ++i) outputs.push_back(detail::rel_model_path(i));
  if (detail::stage_is_current(ctx, "train", ctx.hashes.train, outputs)) {
    *ctx.log << "[train] up to date, skipping\n";
    return false;
  }
  if (!detail::outputs_exist(ctx.out_dir, {detail::rel_dataset_path(1)}))
    throw ConfigError("datasets missing; run `generate-data` first");
  fs::create_directories(detail::join(ctx.out_dir, "models"));

  json values;
  values["subsystems"] = json::array();
  for (int i = 1; i <= h; ++i) {
    const Dataset ds = csv::read_dataset(detail::join(ctx.out_dir, detail::rel_dataset_path(i)),
                                         ctx.cfg.data.noise_std);
    const auto& sc = ctx.cfg.gp_subsystems[i - 1];
    std::vector<SeKernelParams> kernels;
    bool converged = true;
    json fit_info;
    if (sc.fit) {
      // Hyperparameters from a deterministic subsample to keep the
      // optimization O(150^3) per iteration; the full model uses all data.
      Dataset sub = ds;
      const int cap = 150;
      if (ds.size() > cap) {
        sub.inputs = ds.inputs.topRows(cap);
        sub.targets = ds.targets.topRows(cap);
      }
      SeKernelParams init;
      if (sc.fit_init) {
        init = *sc.fit_init;
      } else {
        const Box dom = sys.domain.head(i * sys.block_dim);
        double target_scale = 0.0;
        for (int c = 0; c < sub.output_dim(); ++c)
          target_scale = std::max(
              target_scale, std::sqrt((sub.targets.col(c).array() -
                                       sub.targets.col(c).mean()).square().mean()));
        init.signal_std = std::max(target_scale, 10.0 * ctx.cfg.data.noise_std);
        init.length_scales = 0.5 * dom.width();
      }
      const HyperFitResult fr = fit_hyperparameters(sub, init);
      kernels = fr.kernels;
      converged = fr.converged;
      fit_info["log_marginal"] = fr.log_marginal;
      if (!converged)
        *ctx.log << "[train] warning: hyperparameter fit for subsystem " << i
                 << " did not fully converge; using best-found parameters\n";
    } else {
      kernels = sc.kernels;
    }
    const GpModel model = fit(ds, kernels);
    const auto rho = max_std_over_domain(model, sys.domain.head(i * sys.block_dim),
                                         ctx.cfg.rho_bar_grid);

    json mj;
    mj["dataset"] = detail::rel_dataset_path(i);
    mj["noise_std"] = ds.noise_std;
    mj["kernels"] = json::array();
    for (int c = 0; c < model.output_dim(); ++c)
      mj["kernels"].push_back(detail::kernel_to_json(model.kernels[c]));
    mj["rho_bar"] = detail::vec_to_json(rho.per_dim);
    mj["rho_bar_norm"] = rho.norm;
    mj["fitted"] = sc.fit;
    if (!fit_info.is_null()) mj["fit"] = fit_info;
    std::ofstream mf(detail::join(ctx.out_dir, detail::rel_model_path(i)));
    mf << mj.dump(2) << "\n";

    json sv;
    sv["rho_bar_norm"] = rho.norm;
    sv["rho_bar"] = detail::vec_to_json(rho.per_dim);
    sv["fitted"] = sc.fit;
    sv["converged"] = converged;
    values["subsystems"].push_back(sv);
    *ctx.log << "[train] subsystem " << i << ": rho_bar = " << rho.norm
             << (sc.fit ? " (fitted kernel)" : " (configured kernel)") << "\n";
  }
  ctx.manifest.record_stage("train", ctx.hashes.train, outputs, values);
  ctx.manifest.save(ctx.out_dir);
  return true;
}

// ---------------------------------------------------------------------------
// Stage 3: bounds, controller synthesis, certificates.

struct CertificateRecord {
  std::string label;
  IspsCertificate certificate;
};

inline json certificate_to_json(const std::string& label, const IspsCertificate& c) {
  json j;
  j["label"] = label;
  j["k_per_subsystem"] = detail::vec_to_json(c.k_per_subsystem);
  j["k"] = c.decay_rate;
  j["c_tilde"] = c.c_tilde;
  j["c"] = c.residual;
  j["probability"] = c.probability;
  return j;
}

inline CertificateRecord certificate_from_json(const json& j) {
  CertificateRecord rec;
  rec.label = j.at("label").get<std::string>();
  rec.certificate.k_per_subsystem = detail::vec_from_json(j.at("k_per_subsystem"));
  rec.certificate.decay_rate = j.at("k").get<double>();
  rec.certificate.c_tilde = j.at("c_tilde").get<double>();
  rec.certificate.residual = j.at("c").get<double>();
  rec.certificate.probability = j.at("probability").get<double>();
  return rec;
}

inline BacksteppingController load_controller(const PipelineContext& ctx) {
  const std::string path = detail::join(ctx.out_dir, "controller.json");
  std::ifstream f(path);
  if (!f) throw ConfigError("missing controller file (run `certify` first): " + path);
  json j;
  f >> j;
  const StrictFeedbackSystem sys = ctx.cfg.make_system();
  BacksteppingController ctrl;
  ctrl.h = sys.num_subsystems;
  ctrl.n = sys.block_dim;
  for (int i = 1; i <= ctrl.h; ++i)
    ctrl.models.push_back(std::make_shared<GpSubsystemModel>(load_model(ctx, i)));
  const auto lam = detail::vec_from_json(j.at("gains"));
  ctrl.lambdas.assign(lam.data(), lam.data() + lam.size());
  ctrl.lipschitz = detail::mat_from_json(j.at("lipschitz"));
  ctrl.safety = j.at("safety").get<double>();
  ctrl.mode = j.at("derivative_mode").get<std::string>() == "analytic"
                  ? DerivativeMode::Analytic
                  : DerivativeMode::FiniteDifference;
  ctrl.b = sys.gains;
  ctrl.input_gain_scalar = sys.input_gain_scalar;
  ctrl.input_gain_fn = sys.input_gain_fn;
  ctrl.domain = sys.domain;
  ctrl.validate();
  verify_gain_conditions(ctrl.lambdas, ctrl.lipschitz, ctrl.h);
  return ctrl;
}

inline bool run_certify(PipelineContext& ctx) {
  const std::vector<std::string> outputs = {"controller.json"};
  if (detail::stage_is_current(ctx, "certify", ctx.hashes.certify, outputs)) {
    *ctx.log << "[certify] up to date, skipping\n";
    return false;
  }
  const StrictFeedbackSystem sys = ctx.cfg.make_system();
  const int h = sys.num_subsystems;
  const int n = sys.block_dim;

  std::vector<GpModel> gps;
  std::vector<ModelPtr> models;
  std::vector<double> rho_norms;
  std::vector<VecX> rho_dims;
  for (int i = 1; i <= h; ++i) {
    gps.push_back(load_model(ctx, i));
    models.push_back(std::make_shared<GpSubsystemModel>(gps.back()));
    std::ifstream mf(detail::join(ctx.out_dir, detail::rel_model_path(i)));
    json mj;
    mf >> mj;
    rho_norms.push_back(mj.at("rho_bar_norm").get<double>());
    rho_dims.push_back(detail::vec_from_json(mj.at("rho_bar")));
  }

  // Controller first; its Lipschitz rows enter every certificate.
  const BacksteppingController ctrl = synthesize_controller(models, sys, ctx.cfg.controller);
  {
    json cj;
    cj["gains"] = detail::vec_to_json(
        Eigen::Map<const VecX>(ctrl.lambdas.data(), static_cast<long>(ctrl.lambdas.size())));
    cj["lipschitz"] = detail::mat_to_json(ctrl.lipschitz);
    cj["safety"] = ctrl.safety;
    cj["derivative_mode"] = to_string(ctrl.mode);
    cj["models"] = json::array();
    for (int i = 1; i <= h; ++i) cj["models"].push_back(detail::rel_model_path(i));
    std::ofstream cf(detail::join(ctx.out_dir, "controller.json"));
    cf << cj.dump(2) << "\n";
  }
  *ctx.log << "[certify] gains:";
  for (double l : ctrl.lambdas) *ctx.log << " " << l;
  *ctx.log << "\n";

  json values;
  values["gains"] = detail::vec_to_json(
      Eigen::Map<const VecX>(ctrl.lambdas.data(), static_cast<long>(ctrl.lambdas.size())));
  values["lipschitz"] = detail::mat_to_json(ctrl.lipschitz);
  values["bounds"] = json::array();
  values["certificates"] = json::array();

  const auto record_certificate = [&](const std::string& label,
                                      const std::vector<ErrorBound>& bounds) {
    const IspsCertificate cert = build_certificate(ctrl.lambdas, ctrl.lipschitz, bounds);
    json cj = certificate_to_json(label, cert);
    json ps = json::array();
    for (const auto& b : bounds) ps.push_back(b.product);
    cj["products"] = ps;
    values["certificates"].push_back(cj);
    *ctx.log << "[certify] " << label << ": k = " << cert.decay_rate << ", c~ = " << cert.c_tilde
             << ", c = " << cert.residual << ", probability = " << cert.probability << "\n";
  };

  if (ctx.cfg.monte_carlo) {
    const auto& mc = *ctx.cfg.monte_carlo;
    const std::uint64_t mc_seed = rng::derive(ctx.cfg.seed, detail::fnv1a("mc-preset"));
    const std::uint64_t cal_seed = rng::derive(ctx.cfg.seed, detail::fnv1a("mc-calibrate"));
    const std::uint64_t ver_seed = rng::derive(ctx.cfg.seed, detail::fnv1a("mc-verify"));

    const ProbabilityInterval preset =
        estimate_joint_bound_probability(gps, sys, mc.threshold, mc.realizations, mc.confidence,
                                         mc_seed);
    // Calibrated threshold: empirical quantile of the worst subsystem error,
    // measured on an independent sample set, then certified on a third.
    std::vector<double> errs(static_cast<std::size_t>(mc.realizations));
    for (long s = 0; s < mc.realizations; ++s) {
      const VecX x = rng::uniform_in_box(cal_seed, static_cast<std::uint64_t>(s), sys.domain);
      double worst = 0.0;
      for (int i = 0; i < h; ++i) {
        const VecX nu = sys.prefix(x, i + 1);
        worst = std::max(worst, inf_norm(VecX(sys.drift[i](nu) - gps[i].posterior_mean(nu))));
      }
      errs[static_cast<std::size_t>(s)] = worst;
    }
    std::sort(errs.begin(), errs.end());
    const double calibrated =
        errs[static_cast<std::size_t>(mc.calibration_quantile * (errs.size() - 1))];
    const ProbabilityInterval cal_iv = estimate_joint_bound_probability(
        gps, sys, calibrated, mc.realizations, mc.confidence, ver_seed);

    json bj;
    bj["kind"] = "monte-carlo";
    bj["preset_threshold"] = mc.threshold;
    bj["preset_interval"] = {preset.lower, preset.upper};
    bj["calibrated_threshold"] = calibrated;
    bj["calibrated_interval"] = {cal_iv.lower, cal_iv.upper};
    bj["confidence"] = mc.confidence;
    bj["realizations"] = mc.realizations;
    bj["seed"] = mc_seed;
    values["bounds"].push_back(bj);
    *ctx.log << "[certify] monte-carlo: preset " << mc.threshold << " -> [" << preset.lower << ", "
             << preset.upper << "], calibrated " << calibrated << " -> [" << cal_iv.lower << ", "
             << cal_iv.upper << "]\n";

    std::vector<ErrorBound> preset_bounds(h), cal_bounds(h);
    for (int i = 0; i < h; ++i) {
      preset_bounds[i].kind = BoundKind::MonteCarlo;
      preset_bounds[i].product = mc.threshold;
      preset_bounds[i].eta_norm = rho_norms[i] > 0 ? mc.threshold / rho_norms[i] : 0.0;
      preset_bounds[i].rho_bar_norm = rho_norms[i];
      preset_bounds[i].epsilon = std::min(1.0 - 1e-12, 1.0 - preset.lower);
      cal_bounds[i] = preset_bounds[i];
      cal_bounds[i].product = calibrated;
      cal_bounds[i].eta_norm = rho_norms[i] > 0 ? calibrated / rho_norms[i] : 0.0;
      cal_bounds[i].epsilon = std::min(1.0 - 1e-12, 1.0 - cal_iv.lower);
    }
    record_certificate("mc-calibrated", cal_bounds);
    record_certificate("mc-preset", preset_bounds);
  }

  if (ctx.cfg.probabilistic) {
    const auto& pc = *ctx.cfg.probabilistic;
    std::vector<ErrorBound> bounds(h);
    json per = json::array();
    for (int i = 0; i < h; ++i) {
      const EtaResult eta = probabilistic_eta(pc.rkhs_bounds[i], ctx.cfg.data.noise_std,
                                              pc.info_gain[i], pc.epsilon, n, h);
      bounds[i].kind = BoundKind::Probabilistic;
      bounds[i].eta_norm = eta.norm;
      bounds[i].rho_bar_norm = rho_norms[i];
      bounds[i].product = eta.norm * rho_norms[i];
      bounds[i].epsilon = pc.epsilon;
      json e;
      e["eta_norm"] = eta.norm;
      e["rho_bar_norm"] = rho_norms[i];
      e["product"] = bounds[i].product;
      per.push_back(e);
    }
    json bj;
    bj["kind"] = "probabilistic";
    bj["epsilon"] = pc.epsilon;
    bj["per_subsystem"] = per;
    values["bounds"].push_back(bj);
    record_certificate("probabilistic", bounds);
  }

  if (ctx.cfg.deterministic) {
    const auto& dc = *ctx.cfg.deterministic;
    std::vector<ErrorBound> bounds(h);
    json per = json::array();
    for (int i = 0; i < h; ++i) {
      VecX rkhs(n);
      for (int c = 0; c < n; ++c)
        rkhs[c] = rkhs_bound_from_lipschitz(dc.hoelder_constants[i][c], gps[i].kernels[c]);
      const EtaResult eta = deterministic_eta(gps[i], rkhs);
      bounds[i].kind = BoundKind::Deterministic;
      bounds[i].eta_norm = eta.norm;
      bounds[i].rho_bar_norm = rho_norms[i];
      bounds[i].product = eta.norm * rho_norms[i];
      bounds[i].epsilon = 0.0;
      json e;
      e["eta_norm"] = eta.norm;
      e["rkhs_bound"] = detail::vec_to_json(rkhs);
      e["rho_bar_norm"] = rho_norms[i];
      e["product"] = bounds[i].product;
      per.push_back(e);
    }
    json bj;
    bj["kind"] = "deterministic";
    bj["per_subsystem"] = per;
    values["bounds"].push_back(bj);
    record_certificate("deterministic", bounds);
  }

  // Conservatism comparison data: empirical max error over domain samples.
  {
    const std::uint64_t emp_seed = rng::derive(ctx.cfg.seed, detail::fnv1a("empirical-max"));
    double emp = 0.0;
    const long samples = 100000;
    for (long s = 0; s < samples; ++s) {
      const VecX x = rng::uniform_in_box(emp_seed, static_cast<std::uint64_t>(s), sys.domain);
      for (int i = 0; i < h; ++i) {
        const VecX nu = sys.prefix(x, i + 1);
        emp = std::max(emp, inf_norm(VecX(sys.drift[i](nu) - gps[i].posterior_mean(nu))));
      }
    }
    values["empirical_max_error"] = emp;
    values["empirical_max_error_samples"] = samples;
    *ctx.log << "[certify] empirical max model error over " << samples << " samples: " << emp
             << "\n";
  }

  ctx.manifest.record_stage("certify", ctx.hashes.certify, outputs, values);
  ctx.manifest.save(ctx.out_dir);
  return true;
}

// ---------------------------------------------------------------------------
// Stage 4: simulation, verification, figures.

struct SimulateOutcome {
  bool ran = false;
  long total_violations = 0;
};

inline SimulateOutcome run_simulate(PipelineContext& ctx) {
  std::vector<std::string> outputs;
  for (const auto& sc : ctx.cfg.scenarios) {
    outputs.push_back("scenarios/" + sc.name + "/trajectory_a.csv");
    outputs.push_back("scenarios/" + sc.name + "/trajectory_b.csv");
    outputs.push_back("scenarios/" + sc.name + "/closeness.csv");
    outputs.push_back("scenarios/" + sc.name + "/states.svg");
    outputs.push_back("scenarios/" + sc.name + "/closeness.svg");
    outputs.push_back("scenarios/" + sc.name + "/closeness_log.svg");
  }
  SimulateOutcome outcome;
  if (detail::stage_is_current(ctx, "simulate", ctx.hashes.simulate, outputs)) {
    *ctx.log << "[simulate] up to date, skipping\n";
    const json* v = ctx.manifest.stage_values("simulate");
    if (v && v->contains("total_violations"))
      outcome.total_violations = (*v)["total_violations"].get<long>();
    return outcome;
  }
  const json* certify_values = ctx.manifest.stage_values("certify");
  if (!certify_values) throw ConfigError("certificates missing; run `certify` first");

  const StrictFeedbackSystem sys = ctx.cfg.make_system();
  const BacksteppingController ctrl = load_controller(ctx);
  std::vector<CertificateRecord> certs;
  for (const auto& cj : certify_values->at("certificates"))
    certs.push_back(certificate_from_json(cj));
  if (certs.empty()) throw ConfigError("no certificates recorded; re-run `certify`");

  json values;
  values["scenarios"] = json::array();
  outcome.ran = true;
  for (const auto& sc : ctx.cfg.scenarios) {
    const std::string dir = detail::join(ctx.out_dir, "scenarios/" + sc.name);
    fs::create_directories(dir);
    const InputSignal ua = [&sc](double t) { return sc.u_hat.at(t); };
    const InputSignal ub = [&sc](double t) { return sc.u_hat_other.at(t); };
    PairResult pr;
    try {
      pr = simulate_pair(sys, ctrl, sc.x0, sc.x0_other, ua, ub, ctx.cfg.simulation);
    } catch (const NumericalError& e) {
      throw NumericalError("scenario '" + sc.name + "': " + e.what());
    }
    csv::write_trajectory(dir + "/trajectory_a.csv", pr.pair.first);
    csv::write_trajectory(dir + "/trajectory_b.csv", pr.pair.second);

    json sj;
    sj["name"] = sc.name;
    sj["clamp_events"] = pr.clamp_events;
    sj["domain_exits"] = pr.domain_exits;
    if (pr.clamp_events > 0)
      *ctx.log << "[simulate] warning: scenario '" << sc.name << "' clamped " << pr.clamp_events
               << " steps; check plant parameters and scenario states\n";

    // Verify against every certificate; the first is the primary one.
    svg::LinePlot closeplot;
    closeplot.title = "Trajectory closeness, scenario " + sc.name;
    closeplot.y_label = "d(x(t), x'(t))";
    BoundReport primary;
    json checks = json::array();
    long scenario_violations = 0;
    ResidualSeries residuals;
    for (std::size_t c = 0; c < certs.size(); ++c) {
      const BoundReport rep = verify_bound(certs[c].certificate, ctrl, pr.pair);
      if (c == 0) {
        primary = rep;
        residuals = lyapunov_residual(certs[c].certificate, ctrl, pr.pair);
        svg::Series ds;
        ds.name = "closeness";
        ds.color = "#1f77b4";
        ds.x = rep.times;
        ds.y = rep.closeness_series;
        closeplot.series.push_back(ds);
      }
      svg::Series bs;
      bs.name = "bound (" + certs[c].label + ")";
      bs.color = c == 0 ? "#d62728" : (c == 1 ? "#2ca02c" : "#9467bd");
      bs.dashed = true;
      bs.x = rep.times;
      bs.y = rep.bound_series;
      closeplot.series.push_back(bs);

      json check;
      check["certificate"] = certs[c].label;
      check["violations"] = rep.violations;
      check["max_violation"] = rep.max_violation;
      if (rep.first_violation_time) check["first_violation_time"] = *rep.first_violation_time;
      checks.push_back(check);
      scenario_violations += rep.violations;
    }

    long residual_ok = 0;
    for (std::size_t i = 0; i < residuals.residual.size(); ++i)
      if (residuals.residual[i] <= 1e-6 * std::max(1.0, residuals.lyapunov[i])) ++residual_ok;
    const double residual_fraction =
        residuals.residual.empty() ? 1.0
                                   : static_cast<double>(residual_ok) /
                                         static_cast<double>(residuals.residual.size());

    csv::write_verification(dir + "/closeness.csv", primary.times, primary.closeness_series,
                            primary.bound_series, residuals.residual);

    // State evolution figure, both trajectories.
    svg::LinePlot states;
    states.title = "State evolution, scenario " + sc.name;
    states.y_label = "state";
    const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    const int d = sys.state_dim();
    for (int k = 0; k < d; ++k) {
      svg::Series a, b;
      a.name = "x" + std::to_string(k + 1);
      a.color = palette[k % 6];
      b.name = "x" + std::to_string(k + 1) + "'";
      b.color = palette[k % 6];
      b.dashed = true;
      a.x = b.x = pr.pair.times();
      a.y.reserve(pr.pair.size());
      b.y.reserve(pr.pair.size());
      for (std::size_t i = 0; i < pr.pair.size(); ++i) {
        a.y.push_back(pr.pair.first.states[i][k]);
        b.y.push_back(pr.pair.second.states[i][k]);
      }
      states.series.push_back(std::move(a));
      states.series.push_back(std::move(b));
    }
    svg::write_plot(dir + "/states.svg", states);
    svg::write_plot(dir + "/closeness.svg", closeplot);
    closeplot.log_y = true;
    closeplot.title += " (log scale)";
    svg::write_plot(dir + "/closeness_log.svg", closeplot);

    sj["initial_closeness"] = primary.initial_closeness;
    sj["final_closeness"] = primary.final_closeness;
    sj["delta_u_sup"] = primary.delta_u_sup;
    sj["checks"] = checks;
    sj["violations"] = scenario_violations;
    sj["residual_ok_fraction"] = residual_fraction;
    values["scenarios"].push_back(sj);
    outcome.total_violations += scenario_violations;
    *ctx.log << "[simulate] scenario '" << sc.name << "': d0 = " << primary.initial_closeness
             << ", final = " << primary.final_closeness << ", violations = " << scenario_violations
             << ", residual ok " << residual_fraction * 100.0 << "%\n";
  }
  values["total_violations"] = outcome.total_violations;
  ctx.manifest.record_stage("simulate", ctx.hashes.simulate, outputs, values);
  ctx.manifest.save(ctx.out_dir);
  return outcome;
}

// ---------------------------------------------------------------------------
// Stage 5: consolidated report.

inline std::string render_report(const PipelineContext& ctx) {
  const auto& stages = ctx.manifest.data.at("stages");
  std::vector<std::string> missing;
  for (const char* s : {"generate-data", "train", "certify", "simulate"})
    if (!stages.contains(s)) missing.push_back(s);
  if (!missing.empty()) {
    std::string msg = "cannot build report; missing stages:";
    for (const auto& m : missing) msg += " " + m;
    throw ConfigError(msg);
  }

  std::ostringstream os;
  os << "# Run report\n\n";
  os << "- plant: " << ctx.cfg.plant_type << "\n";
  os << "- seed: " << ctx.cfg.seed << "\n";
  os << "- output: " << ctx.out_dir << "\n\n";

  const json& train = *ctx.manifest.stage_values("train");
  os << "## Models\n\n";
  os << "| subsystem | rho_bar | kernel |\n|---|---|---|\n";
  for (std::size_t i = 0; i < train.at("subsystems").size(); ++i) {
    const auto& s = train.at("subsystems")[i];
    os << "| " << (i + 1) << " | " << s.at("rho_bar_norm").get<double>() << " | "
       << (s.at("fitted").get<bool>() ? "fitted" : "configured") << " |\n";
  }

  const json& cert = *ctx.manifest.stage_values("certify");
  os << "\n## Controller\n\n- gains:";
  for (const auto& g : cert.at("gains")) os << " " << g.get<double>();
  os << "\n- Lipschitz rows:";
  for (const auto& row : cert.at("lipschitz")) {
    os << " [";
    for (const auto& v : row) os << " " << v.get<double>();
    os << " ]";
  }
  os << "\n\n## Error bounds\n\n";
  for (const auto& b : cert.at("bounds")) {
    os << "- " << b.at("kind").get<std::string>() << ": ";
    if (b.contains("preset_threshold")) {
      os << "preset " << b.at("preset_threshold").get<double>() << " -> ["
         << b.at("preset_interval")[0].get<double>() << ", "
         << b.at("preset_interval")[1].get<double>() << "]"
         << ", calibrated " << b.at("calibrated_threshold").get<double>() << " -> ["
         << b.at("calibrated_interval")[0].get<double>() << ", "
         << b.at("calibrated_interval")[1].get<double>() << "]";
    }
    if (b.contains("per_subsystem")) {
      os << "products:";
      for (const auto& p : b.at("per_subsystem")) os << " " << p.at("product").get<double>();
    }
    os << "\n";
  }
  os << "- empirical max model error: " << cert.at("empirical_max_error").get<double>() << "\n";

  os << "\n## Certificates\n\n";
  os << "| label | k | c~ | c | probability |\n|---|---|---|---|---|\n";
  for (const auto& c : cert.at("certificates"))
    os << "| " << c.at("label").get<std::string>() << " | " << c.at("k").get<double>() << " | "
       << c.at("c_tilde").get<double>() << " | " << c.at("c").get<double>() << " | "
       << c.at("probability").get<double>() << " |\n";

  const json& sim = *ctx.manifest.stage_values("simulate");
  os << "\n## Scenarios\n\n";
  os << "| scenario | d0 | final closeness | violations | residual ok | clamps | exits |\n"
     << "|---|---|---|---|---|---|---|\n";
  for (const auto& s : sim.at("scenarios"))
    os << "| " << s.at("name").get<std::string>() << " | " << s.at("initial_closeness").get<double>()
       << " | " << s.at("final_closeness").get<double>() << " | " << s.at("violations").get<long>()
       << " | " << s.at("residual_ok_fraction").get<double>() * 100.0 << "% | "
       << s.at("clamp_events").get<long>() << " | " << s.at("domain_exits").get<long>() << " |\n";
  return os.str();
}

inline void run_report(PipelineContext& ctx) {
  const std::string report = render_report(ctx);
  std::ofstream f(detail::join(ctx.out_dir, "report.md"));
  f << report;
  *ctx.log << report;
}

}  // namespace gpstep
