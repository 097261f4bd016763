// cdcm: canonical dynamic causal modeling toolkit.
//
// Subcommands: simulate | check-design | fit | recover | group | summarize |
// bench. Every run writes config-snapshot.json into its output directory so
// results reproduce bit-for-bit. Exit codes: 0 success, 1 user error,
// 2 numeric or convergence failure (outputs are still written when possible).

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <cdcm/diagnostics.hpp>
#include <cdcm/fit.hpp>
#include <cdcm/group.hpp>
#include <cdcm/identify.hpp>
#include <cdcm/io.hpp>
#include <cdcm/rk45.hpp>
#include <cdcm/simulate.hpp>

namespace fs = std::filesystem;
using cdcm::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void write_snapshot(const std::string& out_dir, const json& resolved) {
  cdcm::write_json_file((fs::path(out_dir) / "config-snapshot.json").string(),
                        resolved);
}

std::vector<std::string> roi_names(int d) {
  std::vector<std::string> names;
  for (int i = 0; i < d; ++i) names.push_back("ROI_" + std::to_string(i + 1));
  return names;
}

int run_simulate(const std::string& hyp_path, const std::string& design_path,
                 const std::string& truth_path, double snr, std::uint64_t seed,
                 bool no_clamp, const std::string& out_dir) {
  cdcm::SimulationSpec spec;
  spec.hypothesis = cdcm::read_hypothesis(hyp_path);
  spec.design = cdcm::read_design(design_path);
  spec.truth =
      cdcm::params_from_json(cdcm::read_json_file(truth_path), spec.hypothesis);
  spec.snr = snr;
  spec.seed = seed;
  spec.range_clamp = !no_clamp;

  auto bundle = cdcm::simulate(spec);
  fs::create_directories(out_dir);
  const auto names = roi_names(spec.hypothesis.d);
  cdcm::write_matrix_csv((fs::path(out_dir) / "Y.csv").string(), bundle.y, names);
  cdcm::write_matrix_csv((fs::path(out_dir) / "z_true.csv").string(), bundle.z, names);
  cdcm::write_matrix_csv((fs::path(out_dir) / "mu_true.csv").string(), bundle.mu, names);

  json spec_json;
  spec_json["hypothesis"] = cdcm::hypothesis_to_json(spec.hypothesis);
  spec_json["truth"] = cdcm::params_to_json(spec.truth);
  spec_json["snr"] = spec.snr;
  spec_json["seed"] = spec.seed;
  spec_json["range_clamp"] = spec.range_clamp;
  spec_json["tr_seconds"] = spec.design.r;
  spec_json["prescan_rest"] = spec.design.prescan_rest;
  spec_json["noise_scale_applied"] = bundle.noise_scale;
  spec_json["noise_sd"] = std::vector<double>(
      bundle.sigma.data(), bundle.sigma.data() + bundle.sigma.size());
  cdcm::write_json_file((fs::path(out_dir) / "spec.json").string(), spec_json);

  write_snapshot(out_dir, json{{"subcommand", "simulate"},
                               {"hypothesis", hyp_path},
                               {"design", design_path},
                               {"truth", truth_path},
                               {"snr", snr},
                               {"seed", seed},
                               {"range_clamp", !no_clamp},
                               {"out", out_dir}});
  return 0;
}

int run_check_design(const std::string& design_path, int d,
                     const std::string& out_dir) {
  auto design = cdcm::read_design(design_path);
  auto rep = cdcm::check_design(design, d);
  json j = cdcm::audit_report_to_json(rep);
  std::cout << j.dump(2) << "\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    cdcm::write_json_file((fs::path(out_dir) / "report.json").string(), j);
    write_snapshot(out_dir, json{{"subcommand", "check-design"},
                                 {"design", design_path},
                                 {"d", d},
                                 {"out", out_dir}});
  }
  return rep.design_pass() ? 0 : 2;
}

int run_fit(const std::string& data_path, const std::string& hyp_path,
            const std::string& design_path, const cdcm::FitOptions& opt,
            const std::string& out_dir) {
  auto hyp = cdcm::read_hypothesis(hyp_path);
  auto design = cdcm::read_design(design_path);
  auto bold = cdcm::read_bold_csv(data_path);
  if (bold.range_warning)
    std::cerr << "warning: range(Y) exceeds 4; consider rescaling the input\n";

  auto result = cdcm::fit_model(hyp, design, bold.y, opt);

  fs::create_directories(out_dir);
  cdcm::write_draws_csv((fs::path(out_dir) / "draws.csv").string(), result.draws);
  cdcm::write_json_file((fs::path(out_dir) / "summary.json").string(),
                        cdcm::summary_to_json(result.summary, result.draws));
  cdcm::write_matrix_csv((fs::path(out_dir) / "predicted.csv").string(),
                         result.predicted,
                         bold.roi_names.empty() ? roi_names(hyp.d) : bold.roi_names);
  write_snapshot(out_dir,
                 json{{"subcommand", "fit"},
                      {"data", data_path},
                      {"hypothesis", hyp_path},
                      {"design", design_path},
                      {"chains", opt.sampler.chains},
                      {"warmup", opt.sampler.warmup},
                      {"sampling", opt.sampler.fixed_sampling},
                      {"target_accept", opt.sampler.target_accept},
                      {"max_treedepth", opt.sampler.max_treedepth},
                      {"ess_alpha", opt.sampler.ess_alpha},
                      {"ess_eps", opt.sampler.ess_eps},
                      {"max_iterations", opt.sampler.max_iterations},
                      {"init_draws", opt.init_draws},
                      {"init_refine", opt.init_refine},
                      {"seed", opt.sampler.seed},
                      {"out", out_dir}});
  if (result.draws.divergence_warning)
    std::cerr << "warning: >1% divergent transitions; raise --target-accept "
                 "to 0.95 or 0.99\n";
  if (!result.draws.converged) {
    std::cerr << "warning: sampler stopped at the iteration cap before the "
                 "ESS target; outputs written\n";
    return 2;
  }
  return 0;
}

int run_recover(const std::string& data_path, const std::string& design_path,
                bool latent, const std::string& out_dir) {
  auto design = cdcm::read_design(design_path);
  auto csv = cdcm::read_matrix_csv(data_path, /*has_header=*/true);
  MatrixXd z;
  if (latent) {
    z = csv.values;
  } else {
    std::cerr << "note: treating input as noiseless BOLD with beta = 0; "
                 "deconvolving\n";
    z = cdcm::deconvolve(csv.values, cdcm::hrf_kernel(design.r, design.n()));
  }
  if (z.rows() != design.n())
    throw cdcm::invalid_input("recover: data rows do not match the design");

  auto rec = cdcm::recover_from_latent(z, design, design.m());
  json j;
  auto mat = [](const MatrixXd& m) {
    std::vector<std::vector<double>> v(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        v[static_cast<std::size_t>(i)].push_back(m(i, c));
    return v;
  };
  j["A"] = mat(rec.global.a);
  j["B"] = json::array();
  for (const auto& b : rec.global.b) j["B"].push_back(mat(b));
  j["C"] = mat(rec.global.c);
  j["s_star"] = std::vector<double>(rec.s_star.data(),
                                    rec.s_star.data() + rec.s_star.size());
  j["stacking_residual"] = rec.global.residual;
  j["intercept_residual"] = rec.global.intercept_resid;
  j["blocks_used"] = rec.blocks_used;
  std::cout << j.dump(2) << "\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    cdcm::write_json_file((fs::path(out_dir) / "recovered.json").string(), j);
    write_snapshot(out_dir, json{{"subcommand", "recover"},
                                 {"data", data_path},
                                 {"design", design_path},
                                 {"latent", latent},
                                 {"out", out_dir}});
  }
  return 0;
}

int run_group(const std::string& subjects_dir, const std::string& cov_path,
              const cdcm::SamplerConfig& cfg, const std::string& out_dir) {
  std::vector<std::pair<std::string, cdcm::SubjectSummary>> subjects;
  for (const auto& entry : fs::directory_iterator(subjects_dir)) {
    fs::path p = entry.path();
    if (entry.is_directory() && fs::exists(p / "summary.json"))
      subjects.emplace_back(p.filename().string(),
                            cdcm::read_subject_summary((p / "summary.json").string()));
    else if (p.extension() == ".json")
      subjects.emplace_back(p.stem().string(),
                            cdcm::read_subject_summary(p.string()));
  }
  std::sort(subjects.begin(), subjects.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  if (subjects.size() < 2)
    throw cdcm::invalid_input("group: need at least two subject summaries in " +
                              subjects_dir);

  std::vector<std::string> cov_labels;
  MatrixXd bmat(static_cast<Eigen::Index>(subjects.size()), 0);
  if (!cov_path.empty()) {
    auto table = cdcm::read_covariate_csv(cov_path);
    if (table.names.empty() || table.names[0] != "subject")
      throw cdcm::invalid_input("group: covariate CSV must start with a 'subject' column");
    cdcm::CovariateTable aligned;
    aligned.names.assign(table.names.begin() + 1, table.names.end());
    for (const auto& [name, summary] : subjects) {
      (void)summary;
      bool found = false;
      for (const auto& row : table.cells)
        if (row[0] == name) {
          aligned.cells.emplace_back(row.begin() + 1, row.end());
          found = true;
          break;
        }
      if (!found)
        throw cdcm::invalid_input("group: no covariate row for subject " + name);
    }
    auto enc = cdcm::encode_covariates(aligned);
    bmat = enc.x;
    cov_labels = enc.labels;
  }

  std::vector<cdcm::SubjectRecord> records;
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    cdcm::SubjectRecord rec;
    rec.theta_hat = subjects[k].second.theta_hat;
    rec.s = subjects[k].second.s;
    rec.b = bmat.cols() > 0 ? VectorXd(bmat.row(static_cast<Eigen::Index>(k)))
                            : VectorXd(0);
    records.push_back(std::move(rec));
  }

  auto result = cdcm::group_fit(records, cfg, cov_labels);

  fs::create_directories(out_dir);
  cdcm::write_draws_csv((fs::path(out_dir) / "group_draws.csv").string(),
                        result.draws);
  cdcm::write_json_file((fs::path(out_dir) / "group_summary.json").string(),
                        cdcm::summary_to_json(result.summary, result.draws));
  // Plot data: one row per parameter with natural-scale mean and HPD bounds.
  MatrixXd est(static_cast<Eigen::Index>(result.summary.params.size()), 3);
  for (std::size_t i = 0; i < result.summary.params.size(); ++i) {
    const auto& ps = result.summary.params[i];
    est(static_cast<Eigen::Index>(i), 0) = ps.nat_mean;
    est(static_cast<Eigen::Index>(i), 1) = ps.nat_lo;
    est(static_cast<Eigen::Index>(i), 2) = ps.nat_hi;
  }
  cdcm::write_matrix_csv((fs::path(out_dir) / "group_estimates.csv").string(), est,
                         {"mean", "hpd_lo", "hpd_hi"});
  write_snapshot(out_dir, json{{"subcommand", "group"},
                               {"subjects", subjects_dir},
                               {"covariates", cov_path},
                               {"chains", cfg.chains},
                               {"warmup", cfg.warmup},
                               {"sampling", cfg.fixed_sampling},
                               {"seed", cfg.seed},
                               {"out", out_dir}});
  return result.draws.converged ? 0 : 2;
}

int run_summarize(const std::string& draws_path, const std::string& hyp_path,
                  const std::string& out_dir) {
  auto csv = cdcm::read_matrix_csv(draws_path, /*has_header=*/true);
  cdcm::PosteriorDraws pd;
  pd.draws = csv.values;
  pd.names = csv.header;
  std::vector<cdcm::NaturalTransform> transforms(
      pd.names.size(), cdcm::NaturalTransform::None);
  int p_theta = static_cast<int>(pd.names.size());
  if (!hyp_path.empty()) {
    auto hyp = cdcm::read_hypothesis(hyp_path);
    transforms = cdcm::natural_transforms(hyp);
    p_theta = hyp.p_theta();
    if (transforms.size() != pd.names.size())
      throw cdcm::invalid_input("summarize: draws do not match the hypothesis");
  }
  auto summary = cdcm::summarize_draws(pd.draws, pd.names, transforms, p_theta);
  json j = cdcm::summary_to_json(summary, pd);
  std::cout << j.dump(2) << "\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    cdcm::write_json_file((fs::path(out_dir) / "summary.json").string(), j);
    write_snapshot(out_dir, json{{"subcommand", "summarize"},
                                 {"draws", draws_path},
                                 {"hypothesis", hyp_path},
                                 {"out", out_dir}});
  }
  return 0;
}

int run_bench(int reps, double tol, const std::string& out_dir) {
  using clock = std::chrono::steady_clock;
  json report;
  report["rk_tolerance"] = tol;
  report["reps"] = reps;
  bool analytic_faster = true;

  for (const auto& [label, copies] :
       {std::pair<std::string, int>{"simple", 1}, {"complex", 3}}) {
    auto [h, p] = cdcm::chain_models(copies);
    auto design = cdcm::benchmark_design();

    const auto t0 = clock::now();
    MatrixXd z;
    for (int i = 0; i < reps; ++i) z = cdcm::neural_trajectory(p, h, design);
    const double analytic_s =
        std::chrono::duration<double>(clock::now() - t0).count() / reps;

    const auto t1 = clock::now();
    MatrixXd zrk(design.n(), h.d);
    for (int i = 0; i < reps; ++i) {
      VectorXd state = p.s_star;
      zrk.row(0) = state.transpose();
      for (int j = 0; j + 1 < design.n(); ++j) {
        Eigen::VectorXi u = design.u.row(j).transpose();
        if (j == 0 && design.prescan_rest) u.setZero();
        auto [at, ct] = cdcm::assemble_block_system(p, h, u);
        state = cdcm::rk45_integrate(
            [&](double, const VectorXd& v) -> VectorXd { return at * v + ct; },
            state, 0.0, design.r, tol);
        zrk.row(j + 1) = state.transpose();
      }
    }
    const double rk_s =
        std::chrono::duration<double>(clock::now() - t1).count() / reps;

    const double err = (z - zrk).cwiseAbs().maxCoeff();
    const double speedup = rk_s / analytic_s;
    analytic_faster = analytic_faster && speedup > 1.0;
    std::printf("%-8s analytic %.3fms  rk45 %.3fms  speedup %.1fx  max|diff| %.2e\n",
                label.c_str(), 1e3 * analytic_s, 1e3 * rk_s, speedup, err);
    report[label] = {{"analytic_seconds", analytic_s},
                     {"rk45_seconds", rk_s},
                     {"speedup", speedup},
                     {"max_abs_diff", err}};
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    cdcm::write_json_file((fs::path(out_dir) / "bench.json").string(), report);
    write_snapshot(out_dir, json{{"subcommand", "bench"},
                                 {"reps", reps},
                                 {"rk_tolerance", tol},
                                 {"out", out_dir}});
  }
  return analytic_faster ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Canonical dynamic causal modeling: simulation, identifiability "
               "auditing, constructive recovery, NUTS inference, and group-level "
               "synthesis"};
  app.require_subcommand(1);
  bool strict = false;
  app.add_flag("--strict", strict, "require an explicit --seed for stochastic runs");

  std::string hyp_path, design_path, truth_path, out_dir, data_path, draws_path;
  std::string subjects_dir, cov_path;
  double snr = 1.68;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool no_clamp = false, latent = false;
  int dim = 2, reps = 20;
  double rk_tol = 1e-9;
  cdcm::FitOptions fit_opt;
  fit_opt.sampler.warmup = 5000;
  cdcm::SamplerConfig group_cfg;
  group_cfg.chains = 5;
  group_cfg.warmup = 1000;
  group_cfg.fixed_sampling = 5000;

  auto* sim = app.add_subcommand("simulate", "forward-simulate BOLD data");
  sim->add_option("--hypothesis", hyp_path)->required();
  sim->add_option("--design", design_path)->required();
  sim->add_option("--truth", truth_path)->required();
  sim->add_option("--snr", snr);
  sim->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });
  sim->add_flag("--no-range-clamp", no_clamp);
  sim->add_option("--out", out_dir)->required();

  auto* chk = app.add_subcommand("check-design", "audit A1-A2 for a design");
  chk->add_option("--design", design_path)->required();
  chk->add_option("--d", dim)->required();
  chk->add_option("--out", out_dir);

  auto* fit = app.add_subcommand("fit", "NUTS posterior sampling");
  fit->add_option("--data", data_path)->required();
  fit->add_option("--hypothesis", hyp_path)->required();
  fit->add_option("--design", design_path)->required();
  fit->add_option("--chains", fit_opt.sampler.chains);
  fit->add_option("--warmup", fit_opt.sampler.warmup);
  fit->add_option("--sampling", fit_opt.sampler.fixed_sampling,
                  "fixed draw count (0 = ESS-based stopping)");
  fit->add_option("--target-accept", fit_opt.sampler.target_accept);
  fit->add_option("--max-treedepth", fit_opt.sampler.max_treedepth);
  fit->add_option("--ess-alpha", fit_opt.sampler.ess_alpha);
  fit->add_option("--ess-eps", fit_opt.sampler.ess_eps);
  fit->add_option("--max-iterations", fit_opt.sampler.max_iterations);
  fit->add_option("--init-draws", fit_opt.init_draws);
  fit->add_option("--init-refine", fit_opt.init_refine);
  fit->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });
  fit->add_option("--out", out_dir)->required();

  auto* rec = app.add_subcommand("recover", "constructive parameter recovery");
  rec->add_option("--data", data_path)->required();
  rec->add_option("--design", design_path)->required();
  rec->add_flag("--latent", latent, "input is the latent trajectory, not BOLD");
  rec->add_option("--out", out_dir);

  auto* grp = app.add_subcommand("group", "hierarchical group synthesis");
  grp->add_option("--subjects", subjects_dir)->required();
  grp->add_option("--covariates", cov_path);
  grp->add_option("--chains", group_cfg.chains);
  grp->add_option("--warmup", group_cfg.warmup);
  grp->add_option("--sampling", group_cfg.fixed_sampling);
  grp->add_option("--ess-alpha", group_cfg.ess_alpha);
  grp->add_option("--ess-eps", group_cfg.ess_eps);
  grp->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });
  grp->add_option("--out", out_dir)->required();

  auto* summ = app.add_subcommand("summarize", "summarize a draws.csv");
  summ->add_option("--draws", draws_path)->required();
  summ->add_option("--hypothesis", hyp_path);
  summ->add_option("--out", out_dir);

  auto* bench = app.add_subcommand("bench", "analytic vs numeric trajectory timing");
  bench->add_option("--reps", reps);
  bench->add_option("--rk-tol", rk_tol);
  bench->add_option("--out", out_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    if (strict && !seed_given && (sim->parsed() || fit->parsed() || grp->parsed())) {
      std::cerr << "error: --strict requires an explicit --seed\n";
      return 1;
    }
    if (sim->parsed())
      return run_simulate(hyp_path, design_path, truth_path, snr, seed, no_clamp,
                          out_dir);
    if (chk->parsed()) return run_check_design(design_path, dim, out_dir);
    if (fit->parsed()) {
      fit_opt.sampler.seed = seed;
      return run_fit(data_path, hyp_path, design_path, fit_opt, out_dir);
    }
    if (rec->parsed()) return run_recover(data_path, design_path, latent, out_dir);
    if (grp->parsed()) {
      group_cfg.seed = seed;
      return run_group(subjects_dir, cov_path, group_cfg, out_dir);
    }
    if (summ->parsed()) return run_summarize(draws_path, hyp_path, out_dir);
    if (bench->parsed()) return run_bench(reps, rk_tol, out_dir);
  } catch (const cdcm::parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const cdcm::invalid_input& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::domain_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
