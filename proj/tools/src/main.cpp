#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <ivhazard/estimator.hpp>
#include <ivhazard/simulate.hpp>

namespace {

using namespace ivhazard;

struct DataFlags {
  std::string path;
  CsvSchema schema;
  bool truncate = false;
};

void add_data_flags(CLI::App* cmd, DataFlags& f) {
  cmd->add_option("--data", f.path, "input CSV, one row per entity-period")
      ->required();
  cmd->add_option("--entity", f.schema.entity, "entity id column")
      ->default_val("entity");
  cmd->add_option("--time", f.schema.time, "time period column")
      ->default_val("time");
  cmd->add_option("--fail", f.schema.fail, "failure indicator column")
      ->default_val("fail");
  cmd->add_option("--endog", f.schema.endog,
                  "endogenous regressor columns (comma separated)")
      ->delimiter(',');
  cmd->add_option("--exog", f.schema.exog,
                  "exogenous regressor columns (comma separated)")
      ->delimiter(',');
  cmd->add_option("--instruments", f.schema.instruments,
                  "excluded instrument columns (comma separated)")
      ->delimiter(',');
  cmd->add_option("--cluster", f.schema.cluster,
                  "cluster column (default: entity)");
  cmd->add_flag("--truncate", f.truncate,
                "drop records dated after an entity's failure instead of "
                "rejecting them");
}

PanelDataset load_data(const DataFlags& f) {
  return load_panel_file(f.path, f.schema,
                         f.truncate ? TruncationPolicy::truncate
                                    : TruncationPolicy::reject);
}

struct EstimateFlags {
  DataFlags data;
  std::string estimator = "cf";
  std::size_t cf_order = 1;
  std::string cf_form = "separate";
  std::vector<std::string> transforms;
  bool difficult_vce = false;
  bool dof_correction = false;
  bool kronecker = false;
  std::string g_form = "sample";
  double level = 0.95;
  double rank_tol = -1.0;
  std::string dump_dir;
  std::string json_path;
};

void add_estimate_flags(CLI::App* cmd, EstimateFlags& f) {
  add_data_flags(cmd, f.data);
  cmd->add_option("--estimator", f.estimator,
                  "cf (control function), naive, or 2sps")
      ->check(CLI::IsMember({"cf", "naive", "2sps"}));
  cmd->add_option("--cf-order", f.cf_order,
                  "polynomial order of the residual terms")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--cf-form", f.cf_form, "separate powers or full products")
      ->check(CLI::IsMember({"separate", "full"}));
  cmd->add_option("--transform", f.transforms,
                  "second-stage regressor expression over the endogenous "
                  "columns, e.g. 'x^2', 'x1*x2', 'x>0'; repeatable")
      ->delimiter(',');
  cmd->add_flag("--difficult-vce", f.difficult_vce,
                "zero-tolerance variance solve for ill-conditioned problems");
  cmd->add_flag("--dof-correction", f.dof_correction,
                "apply the c/(c-1) small-sample cluster correction");
  cmd->add_flag("--kronecker", f.kronecker,
                "shared-instrument shortcut for the stacked Jacobian");
  cmd->add_option("--g-form", f.g_form,
                  "stacked Jacobian form: sample (exact) or expected")
      ->check(CLI::IsMember({"sample", "expected"}));
  cmd->add_option("--level", f.level, "confidence level in (0,1)")
      ->check(CLI::Range(1e-6, 1.0 - 1e-6));
  cmd->add_option("--rank-tol", f.rank_tol,
                  "collinearity screening tolerance (negative = default)");
  cmd->add_option("--dump-matrices", f.dump_dir,
                  "write G.csv, Omega.csv, V.csv to this directory");
  cmd->add_option("--json", f.json_path, "write the full report as JSON");
}

EstimateOptions make_options(const EstimateFlags& f) {
  EstimateOptions opt;
  if (f.estimator == "cf") opt.kind = EstimatorKind::control_function;
  else if (f.estimator == "naive") opt.kind = EstimatorKind::naive;
  else opt.kind = EstimatorKind::two_stage_ps;
  opt.cf.order = f.cf_order;
  opt.cf.form = f.cf_form == "full" ? CfForm::full : CfForm::separate;
  opt.transforms = f.transforms;
  opt.vce_mode =
      f.difficult_vce ? VceMode::zero_tolerance : VceMode::standard;
  opt.g_form = f.g_form == "expected" ? GForm::expected : GForm::sample_jacobian;
  opt.kronecker = f.kronecker;
  opt.dof_correction = f.dof_correction;
  opt.level = f.level;
  opt.first_stage.rank_tol = f.rank_tol;
  opt.cloglog.rank_tol = f.rank_tol;
  return opt;
}

void print_coef_table(std::ostream& out,
                      const std::vector<Coefficient>& coefs, double level,
                      const std::vector<double>* naive_se) {
  std::size_t width = 12;
  for (const auto& c : coefs) width = std::max(width, c.name.size() + 2);
  std::ostringstream ci;
  ci << '[' << std::setprecision(0) << std::fixed << level * 100.0
     << "% conf. interval]";
  out << std::left << std::setw(static_cast<int>(width)) << "" << std::right
      << std::setw(12) << "coef" << std::setw(12) << "std.err"
      << std::setw(10) << "z" << std::setw(10) << "P>|z|" << std::setw(26)
      << ci.str();
  if (naive_se) out << std::setw(14) << "2nd-stage se";
  out << '\n';
  out << std::setprecision(4) << std::fixed;
  for (std::size_t i = 0; i < coefs.size(); ++i) {
    const auto& c = coefs[i];
    out << std::left << std::setw(static_cast<int>(width)) << c.name
        << std::right << std::setw(12) << c.estimate << std::setw(12)
        << c.std_error << std::setw(10) << c.z << std::setw(10) << c.p_value
        << std::setw(13) << c.ci_low << std::setw(13) << c.ci_high;
    if (naive_se) {
      if (i < naive_se->size())
        out << std::setw(14) << (*naive_se)[i];
      else
        out << std::setw(14) << "";
    }
    out << '\n';
  }
  out.unsetf(std::ios::floatfield);
  out << std::setprecision(6);
}

void print_report(std::ostream& out, const EstimateReport& rep) {
  out << "estimator: " << rep.estimator << "   entities: " << rep.n_entities
      << "   rows: " << rep.n_rows << "   clusters: " << rep.n_clusters
      << '\n';
  out << "log likelihood: " << rep.loglik
      << "   iterations: " << rep.iterations << "   converged: "
      << (rep.converged ? "yes" : "no") << " (" << rep.convergence_reason
      << ")   vce: " << rep.vce_mode << "\n\n";
  for (const auto& eq : rep.first_stage) {
    out << "first stage: " << eq.name << '\n';
    print_coef_table(out, eq.coefficients, rep.level, nullptr);
    out << "  F(excluded) = " << eq.f_excluded
        << "   residual variance = " << eq.sigma2 << "\n\n";
  }
  out << "second stage:\n";
  print_coef_table(out, rep.coefficients, rep.level,
                   rep.naive_std_errors.empty() ? nullptr
                                                : &rep.naive_std_errors);
  auto list = [&](const char* label, const std::vector<std::string>& v) {
    if (v.empty()) return;
    out << label << ':';
    for (const auto& s : v) out << ' ' << s;
    out << '\n';
  };
  out << '\n';
  list("dropped instruments", rep.dropped_instruments);
  list("dropped collinear regressors", rep.dropped_regressors);
  list("dropped perfect predictors", rep.dropped_perfect_predictors);
  for (const auto& w : rep.warnings) out << "warning: " << w << '\n';
}

void write_json_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << text << '\n';
  if (!out) throw DataError("failed writing '" + path + "'");
}

int cmd_estimate(const EstimateFlags& f) {
  PanelDataset data = load_data(f.data);
  EstimateOptions opt = make_options(f);
  EstimationContext ctx;
  EstimateReport rep = estimate(data, opt, ctx);
  print_report(std::cout, rep);
  if (!f.json_path.empty()) write_json_file(f.json_path, rep.to_json());
  if (!f.dump_dir.empty()) {
    std::filesystem::create_directories(f.dump_dir);
    const auto dir = std::filesystem::path(f.dump_dir);
    write_labeled_matrix_csv((dir / "G.csv").string(), rep.g,
                             rep.theta_labels);
    write_labeled_matrix_csv((dir / "Omega.csv").string(), rep.omega,
                             rep.theta_labels);
    write_labeled_matrix_csv((dir / "V.csv").string(), rep.v,
                             rep.theta_labels);
    std::cout << "matrices written to " << dir.string() << '\n';
  }
  return 0;
}

struct SweepFlags {
  EstimateFlags est;
  std::vector<std::size_t> orders;
  std::string json_path;
};

int cmd_cf_sweep(const SweepFlags& f) {
  for (std::size_t q : f.orders)
    if (q < 1) throw UsageError("--cf-orders entries must be >= 1");
  if (f.orders.empty()) throw UsageError("--cf-orders must not be empty");

  PanelDataset data = load_data(f.est.data);

  struct Row {
    std::size_t order = 0;
    bool ok = false;
    std::string error;
    std::vector<Coefficient> structural;
  };
  std::vector<Row> rows;
  std::vector<std::string> struct_names;
  for (std::size_t q : f.orders) {
    Row row;
    row.order = q;
    EstimateFlags ef = f.est;
    ef.cf_order = q;
    try {
      EstimateReport rep = estimate(data, make_options(ef));
      // Structural coefficients: second-stage entries that are neither time
      // dummies nor residual-polynomial terms.
      for (const auto& c : rep.coefficients) {
        if (c.name.rfind("psi_t", 0) == 0 || c.name.rfind("cf_v", 0) == 0)
          continue;
        bool exog = false;
        for (const auto& nm : data.exog_names)
          if (c.name == nm) exog = true;
        if (exog) continue;
        row.structural.push_back(c);
        if (std::find(struct_names.begin(), struct_names.end(), c.name) ==
            struct_names.end())
          struct_names.push_back(c.name);
      }
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }

  auto find_coef = [](const Row& row, const std::string& name)
      -> const Coefficient* {
    for (const auto& c : row.structural)
      if (c.name == name) return &c;
    return nullptr;
  };

  std::cout << "residual-polynomial order sweep\n";
  std::size_t width = 8;
  for (const auto& nm : struct_names) width = std::max(width, nm.size() + 2);
  std::cout << std::left << std::setw(8) << "order";
  for (const auto& nm : struct_names)
    std::cout << std::right << std::setw(static_cast<int>(width)) << nm
              << std::setw(static_cast<int>(width)) << "(se)";
  std::cout << '\n' << std::setprecision(4) << std::fixed;
  for (const auto& row : rows) {
    std::cout << std::left << std::setw(8) << row.order;
    if (!row.ok) {
      std::cout << "failed: " << row.error;
    } else {
      for (const auto& nm : struct_names) {
        const Coefficient* c = find_coef(row, nm);
        if (c)
          std::cout << std::right << std::setw(static_cast<int>(width))
                    << c->estimate << std::setw(static_cast<int>(width))
                    << c->std_error;
        else
          std::cout << std::right << std::setw(static_cast<int>(width)) << "-"
                    << std::setw(static_cast<int>(width)) << "-";
      }
    }
    std::cout << '\n';
  }
  std::cout.unsetf(std::ios::floatfield);

  std::ostringstream jout;
  jout << "{\n  \"orders\": [";
  for (std::size_t i = 0; i < rows.size(); ++i)
    jout << (i ? "," : "") << rows[i].order;
  jout << "],\n  \"drift\": {";
  bool first = true;
  for (const auto& nm : struct_names) {
    double drift = 0.0;
    for (const auto& a : rows)
      for (const auto& b : rows) {
        const Coefficient* ca = a.ok ? find_coef(a, nm) : nullptr;
        const Coefficient* cb = b.ok ? find_coef(b, nm) : nullptr;
        if (ca && cb)
          drift = std::max(drift, std::abs(ca->estimate - cb->estimate));
      }
    std::cout << "max drift " << nm << ": " << drift << '\n';
    jout << (first ? "" : ",") << "\n    \"" << nm << "\": " << drift;
    first = false;
  }
  jout << "\n  }\n}";
  if (!f.json_path.empty()) write_json_file(f.json_path, jout.str());

  bool any_ok = false;
  for (const auto& row : rows) any_ok |= row.ok;
  if (!any_ok) throw EstimationError("cf-sweep: every order failed");
  return 0;
}

struct SimulateFlags {
  std::string config_path;
  std::size_t reps = 100;
  std::size_t threads = 1;
  std::vector<std::string> estimators{"cf", "naive"};
  std::string out_dir = ".";
  std::size_t cf_order = 0;  // 0 = from config
  bool difficult_vce = false;
};

int cmd_simulate(const SimulateFlags& f) {
  DgpConfig cfg = load_dgp_config(f.config_path);
  std::vector<EstimatorConfig> estimators;
  for (const auto& name : f.estimators) {
    EstimatorConfig ec;
    ec.name = name;
    ec.options.transforms = cfg.transforms;
    ec.options.cf.order = f.cf_order > 0 ? f.cf_order : cfg.cf_true.order;
    ec.options.cf.form = cfg.cf_true.form;
    if (f.difficult_vce) ec.options.vce_mode = VceMode::zero_tolerance;
    if (name == "cf") ec.options.kind = EstimatorKind::control_function;
    else if (name == "naive") ec.options.kind = EstimatorKind::naive;
    else if (name == "2sps") ec.options.kind = EstimatorKind::two_stage_ps;
    else throw UsageError("unknown estimator '" + name + "'");
    estimators.push_back(std::move(ec));
  }
  McConfig mc;
  mc.n_reps = f.reps;
  mc.threads = f.threads;
  McReport report = run_monte_carlo(cfg, estimators, mc);

  std::filesystem::create_directories(f.out_dir);
  const auto dir = std::filesystem::path(f.out_dir);
  report.write_json((dir / "mc_summary.json").string());
  for (const auto& s : report.summaries)
    report.write_estimates_csv(
        (dir / ("estimates_" + s.estimator + ".csv")).string(), s.estimator);

  std::cout << "monte carlo: " << report.n_reps << " replications, "
            << report.config.n_entities << " entities, t_max "
            << report.config.t_max << "\n\n";
  std::cout << std::left << std::setw(10) << "estimator" << std::setw(12)
            << "param" << std::right << std::setw(10) << "truth"
            << std::setw(10) << "mean" << std::setw(10) << "bias"
            << std::setw(10) << "mc_se" << std::setw(10) << "emp.sd"
            << std::setw(10) << "mean se" << std::setw(8) << "cov95"
            << std::setw(7) << "fail" << '\n';
  std::cout << std::setprecision(4) << std::fixed;
  for (const auto& s : report.summaries) {
    for (std::size_t j = 0; j < s.param_names.size(); ++j) {
      const std::string& nm = s.param_names[j];
      if (nm.rfind("psi_t", 0) == 0 || nm.rfind("pi[", 0) == 0) continue;
      std::cout << std::left << std::setw(10) << s.estimator << std::setw(12)
                << nm << std::right;
      auto num = [&](double x, int w) {
        if (std::isnan(x))
          std::cout << std::setw(w) << "-";
        else
          std::cout << std::setw(w) << x;
      };
      num(s.truth[j], 10);
      num(s.mean[j], 10);
      num(s.bias[j], 10);
      num(s.mc_se[j], 10);
      num(std::isnan(s.empirical_var[j]) ? s.empirical_var[j]
                                         : std::sqrt(s.empirical_var[j]),
          10);
      num(std::isnan(s.vcov_mean[j]) ? s.vcov_mean[j]
                                     : std::sqrt(s.vcov_mean[j]),
          10);
      num(s.coverage95[j], 8);
      std::cout << std::setw(7) << s.failures << '\n';
    }
  }
  std::cout.unsetf(std::ios::floatfield);
  std::cout << "\nwrote " << (dir / "mc_summary.json").string()
            << " and per-estimator CSVs\n";
  return 0;
}

struct ExpandFlags {
  DataFlags data;
  std::string out_path = "-";
};

int cmd_expand(const ExpandFlags& f) {
  PanelDataset data = load_data(f.data);
  EstimationFrame frame = build_frame(data);

  std::ofstream file;
  bool to_stdout = f.out_path == "-";
  if (!to_stdout) {
    file.open(f.out_path);
    if (!file) throw DataError("cannot open '" + f.out_path + "' for writing");
  }
  std::ostream& out = to_stdout ? std::cout : file;

  out << "entity,time,fail";
  for (int p : frame.periods) out << ",d_t" << p;
  for (const auto& nm : frame.exog_names) out << ',' << nm;
  for (const auto& nm : frame.endog_names) out << ',' << nm;
  for (const auto& nm : frame.instrument_names) out << ',' << nm;
  out << '\n';
  out.precision(17);
  for (std::size_t r = 0; r < frame.rows(); ++r) {
    out << frame.entity_ids[frame.row_entity[r]] << ','
        << frame.periods[frame.row_period[r]] << ',' << frame.y[r];
    for (std::size_t k = 0; k < frame.n_periods(); ++k)
      out << ',' << (frame.row_period[r] == k ? 1 : 0);
    for (std::size_t j = 0; j < frame.exog.cols(); ++j)
      out << ',' << frame.exog(r, j);
    for (std::size_t j = 0; j < frame.x_endog.cols(); ++j)
      out << ',' << frame.x_endog(r, j);
    for (std::size_t j = 0; j < frame.instruments.cols(); ++j)
      out << ',' << frame.instruments(r, j);
    out << '\n';
  }
  if (!out) throw DataError("failed writing person-period data");

  std::size_t events = 0;
  for (int y : frame.y) events += static_cast<std::size_t>(y);
  std::ostream& info = to_stdout ? std::cerr : std::cout;
  info << "entities: " << frame.n_entities() << "  rows: " << frame.rows()
       << "  events: " << events << "  periods: " << frame.n_periods()
       << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"instrumented discrete-time proportional-hazards estimation"};
  app.require_subcommand(1);

  ExpandFlags expand_flags;
  CLI::App* expand =
      app.add_subcommand("expand", "validate a panel and emit the "
                                   "person-period frame with time dummies");
  add_data_flags(expand, expand_flags.data);
  expand->add_option("--out", expand_flags.out_path,
                     "output CSV path ('-' for stdout)");

  EstimateFlags est_flags;
  CLI::App* est = app.add_subcommand(
      "estimate", "fit the instrumented hazard model on a panel CSV");
  add_estimate_flags(est, est_flags);

  SweepFlags sweep_flags;
  CLI::App* sweep = app.add_subcommand(
      "cf-sweep",
      "re-estimate across residual-polynomial orders and report drift");
  add_estimate_flags(sweep, sweep_flags.est);
  sweep
      ->add_option("--cf-orders", sweep_flags.orders,
                   "orders to sweep, e.g. 1,2,3,4")
      ->delimiter(',')
      ->required();
  sweep->add_option("--sweep-json", sweep_flags.json_path,
                    "write the drift summary as JSON");

  SimulateFlags sim_flags;
  CLI::App* sim = app.add_subcommand(
      "simulate", "run the Monte Carlo harness from a DGP config");
  sim->add_option("--config", sim_flags.config_path, "DGP config JSON path")
      ->required();
  sim->add_option("--reps", sim_flags.reps, "number of replications")
      ->check(CLI::PositiveNumber);
  sim->add_option("--threads", sim_flags.threads, "worker threads")
      ->check(CLI::PositiveNumber);
  sim->add_option("--estimators", sim_flags.estimators,
                  "estimators to run: cf, naive, 2sps")
      ->delimiter(',');
  sim->add_option("--out", sim_flags.out_dir, "output directory");
  sim->add_option("--cf-order", sim_flags.cf_order,
                  "override the fitted residual-polynomial order");
  sim->add_flag("--difficult-vce", sim_flags.difficult_vce,
                "zero-tolerance variance solve in every replication");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ivhazard::ExitCode::usage);
  }

  try {
    if (app.got_subcommand(expand)) return cmd_expand(expand_flags);
    if (app.got_subcommand(est)) return cmd_estimate(est_flags);
    if (app.got_subcommand(sweep)) return cmd_cf_sweep(sweep_flags);
    if (app.got_subcommand(sim)) return cmd_simulate(sim_flags);
  } catch (const ivhazard::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return static_cast<int>(ivhazard::ExitCode::estimation);
  }
  return 0;
}
