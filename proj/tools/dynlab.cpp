// Command-line driver: simulation, index construction, descriptives,
// estimation and post-estimation as reproducible batch runs. Every run
// writes its outputs plus a manifest with input hashes, the effective
// configuration and the seed.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "dynlab/cma.hpp"
#include "dynlab/csv.hpp"
#include "dynlab/descriptives.hpp"
#include "dynlab/design.hpp"
#include "dynlab/effects.hpp"
#include "dynlab/estimator.hpp"
#include "dynlab/model_spec.hpp"
#include "dynlab/panel.hpp"
#include "dynlab/simulate.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using namespace dynlab;

namespace {

constexpr const char* kVersion = "0.1.0";

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNotConverged = 3 };

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open input for hashing: " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << content;
}

struct Manifest {
  std::string subcommand;
  Json config = Json::object();
  std::optional<std::uint64_t> seed;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  void write(const fs::path& out_dir) const {
    Json j;
    j["tool"] = "dynlab";
    j["version"] = kVersion;
    j["subcommand"] = subcommand;
    j["config"] = config;
    if (seed) j["seed"] = *seed;
    Json in = Json::array();
    for (const auto& path : inputs) {
      Json entry;
      entry["path"] = path;
      std::ostringstream hex;
      hex << std::hex << fnv1a64_file(path);
      entry["fnv1a64"] = hex.str();
      in.push_back(entry);
    }
    j["inputs"] = in;
    j["outputs"] = outputs;
    write_file(out_dir / "manifest.json", j.dump(2) + "\n");
  }
};

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw DataError("cannot create output directory: " + out);
  return dir;
}

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("DYNLAB_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// ---- simulate ----

int run_simulate(const std::string& config_path, const std::string& out,
                 std::optional<std::uint64_t> seed) {
  auto cfg = simulate::DgpConfig::from_json(read_file(config_path));
  if (seed) cfg.seed = *seed;
  auto sim = simulate::generate_panel(cfg);

  fs::path dir = prepare_out_dir(out);
  {
    std::ofstream panel_out(dir / "panel.csv");
    write_panel(panel_out, sim.panel);
  }
  write_file(dir / "truth.json", sim.truth.to_json() + "\n");

  Manifest m;
  m.subcommand = "simulate";
  m.config = Json::parse(cfg.to_json());
  m.seed = cfg.seed;
  m.inputs = {config_path};
  m.outputs = {"panel.csv", "truth.json"};
  m.write(dir);
  return kOk;
}

// ---- index ----

int run_index(const std::string& components_path, const std::string& method,
              const std::string& out) {
  CsvTable table = read_csv_file(components_path);
  int c_id = table.require_column("community_id");
  int c_year = table.require_column("year");
  int c_presence = table.require_column("bank_presence");
  int c_sber = table.require_column("dist_sber_km");
  int c_other = table.require_column("dist_other_km");
  int c_off = table.require_column("offices_per_1000");

  std::vector<cma::CmaComponents> rows;
  for (const auto& r : table.rows) {
    cma::CmaComponents c;
    c.community_id = parse_int(r[c_id]).value();
    c.year = static_cast<int>(parse_int(r[c_year]).value());
    c.bank_presence = static_cast<int>(parse_int(r[c_presence]).value());
    c.dist_sber_km = parse_double(r[c_sber]).value();
    c.dist_other_km = parse_double(r[c_other]).value();
    c.offices_per_1000 = parse_double(r[c_off]).value();
    rows.push_back(c);
  }

  auto result = method == "pca" ? cma::pca_index(rows) : cma::zscore_index(rows);

  fs::path dir = prepare_out_dir(out);
  CsvTable out_table;
  out_table.header = {"community_id", "year", "index", "method"};
  for (const auto& row : result.rows)
    out_table.rows.push_back({std::to_string(row.community_id),
                              std::to_string(row.year), format_double(row.value),
                              method});
  write_csv_file((dir / "index.csv").string(), out_table);

  Json meta;
  meta["method"] = method;
  if (result.method == cma::IndexMethod::Pca) {
    meta["loadings"] = {result.loadings[0], result.loadings[1], result.loadings[2],
                        result.loadings[3]};
    meta["explained_variance"] = result.explained_variance;
  }
  write_file(dir / "index.json", meta.dump(2) + "\n");

  Manifest m;
  m.subcommand = "index";
  m.config["method"] = method;
  m.inputs = {components_path};
  m.outputs = {"index.csv", "index.json"};
  m.write(dir);
  return kOk;
}

// ---- describe ----

std::string render_transition(const TransitionMatrix& tm) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << "group: " << tm.group << " (transitions: " << tm.n_transitions << ")\n";
  out << "               ";
  for (const auto& d : tm.destinations)
    out << d << std::string(d.size() < 12 ? 12 - d.size() : 1, ' ');
  out << "\n";
  for (std::size_t o = 0; o < tm.origins.size(); ++o) {
    const std::string& name = tm.origins[o];
    out << name << std::string(name.size() < 15 ? 15 - name.size() : 1, ' ');
    if (!tm.origin_present[o]) {
      out << "(no origin observations)\n";
      continue;
    }
    for (long d = 0; d < tm.prob.cols(); ++d) {
      std::ostringstream cell;
      cell.setf(std::ios::fixed);
      cell.precision(3);
      cell << tm.prob(static_cast<long>(o), d);
      out << cell.str() << std::string(cell.str().size() < 12 ? 12 - cell.str().size() : 1, ' ');
    }
    out << "\n";
  }
  return out.str();
}

int run_describe(const std::string& panel_path, const std::string& out,
                 bool by_borrower, bool disaggregate, bool text) {
  auto panel = apply_selection_rules(load_panel_file(panel_path));
  auto matrices = transition_matrix(
      panel, by_borrower ? borrower_splitter() : TransitionSplitter(), disaggregate);

  fs::path dir = prepare_out_dir(out);
  CsvTable tcsv;
  tcsv.header = {"group", "origin", "destination", "probability", "count"};
  for (const auto& tm : matrices)
    for (std::size_t o = 0; o < tm.origins.size(); ++o) {
      if (!tm.origin_present[o]) continue;
      for (long d = 0; d < tm.prob.cols(); ++d)
        tcsv.rows.push_back({tm.group, tm.origins[o], tm.destinations[d],
                             format_double(tm.prob(static_cast<long>(o), d)),
                             std::to_string(tm.counts(static_cast<long>(o), d))});
    }
  write_csv_file((dir / "transitions.csv").string(), tcsv);

  std::vector<std::string> vars = {"age",          "female",          "russian",
                                   "school_years", "married",         "hh_size",
                                   "kids",         "log_consumption", "pop_log",
                                   "urban",        "cma_index"};
  auto summary = summary_stats(panel, vars);
  CsvTable scsv;
  scsv.header = {"variable", "state", "mean", "sd", "n", "welch_t_vs_formal"};
  for (const auto& row : summary.rows)
    for (std::size_t g = 0; g < summary.states.size(); ++g) {
      const auto& cell = row.by_state[g];
      scsv.rows.push_back(
          {row.variable, summary.states[g], format_double(cell.mean),
           cell.sd ? format_double(*cell.sd) : "", std::to_string(cell.n),
           row.welch_t[g] ? format_double(*row.welch_t[g]) : ""});
    }
  write_csv_file((dir / "summary.csv").string(), scsv);

  if (text) {
    std::ostringstream txt;
    for (const auto& tm : matrices) txt << render_transition(tm) << "\n";
    write_file(dir / "tables.txt", txt.str());
  }

  Json excl;
  auto log = panel.exclusions();
  excl["age_range"] = log.age_range;
  excl["missing_state"] = log.missing_state;
  excl["missing_next_state"] = log.missing_next_state;
  excl["missing_covariates"] = log.missing_covariates;
  excl["single_observation"] = log.single_observation;
  write_file(dir / "selection.json", excl.dump(2) + "\n");

  Manifest m;
  m.subcommand = "describe";
  m.config["by_borrower"] = by_borrower;
  m.config["disaggregate"] = disaggregate;
  m.inputs = {panel_path};
  m.outputs = {"transitions.csv", "summary.csv", "selection.json"};
  if (text) m.outputs.push_back("tables.txt");
  m.write(dir);
  return kOk;
}

// ---- event study ----

int run_event_study(const std::string& panel_path, int window, const std::string& out) {
  auto panel = apply_selection_rules(load_panel_file(panel_path));
  auto study = event_study(panel, window);

  fs::path dir = prepare_out_dir(out);
  CsvTable csv;
  csv.header = {"panel", "k", "coef", "se", "plotted"};
  for (const auto* res : {&study.entry_rate, &study.switching})
    for (const auto& pt : res->points)
      csv.rows.push_back({res->outcome, std::to_string(pt.k), format_double(pt.coef),
                          format_double(pt.se), format_double(pt.plotted)});
  write_csv_file((dir / "event_study.csv").string(), csv);

  Manifest m;
  m.subcommand = "event-study";
  m.config["window"] = window;
  m.inputs = {panel_path};
  m.outputs = {"event_study.csv"};
  m.write(dir);
  return kOk;
}

// ---- fit ----

ModelSpec spec_with_mode(ModelSpec spec, const std::string& mode) {
  if (mode.empty()) return spec;
  if (mode == "pooled") {
    spec.heterogeneity = HeterogeneityMode::None;
    spec.initial_conditions = InitialConditionsMode::Exogenous;
  } else if (mode == "exogenous") {
    spec.heterogeneity = HeterogeneityMode::RandomEffects;
    spec.initial_conditions = InitialConditionsMode::Exogenous;
  } else if (mode == "wrs") {
    spec.heterogeneity = HeterogeneityMode::RandomEffects;
    spec.initial_conditions = InitialConditionsMode::Wrs;
  } else if (mode == "heckman") {
    spec.heterogeneity = HeterogeneityMode::RandomEffects;
    spec.initial_conditions = InitialConditionsMode::Heckman;
  }
  return spec;
}

int run_fit(const std::string& panel_path, const std::string& config_path,
            const std::string& mode, int nodes, int threads, bool loan,
            const std::string& out) {
  ModelSpec spec;
  if (!config_path.empty())
    spec = ModelSpec::from_json(read_file(config_path));
  else
    spec = loan ? default_loan_spec() : default_employment_spec();
  spec = spec_with_mode(spec, mode);
  if (nodes > 0) spec.quadrature_nodes = nodes;
  if (spec.initial_conditions == InitialConditionsMode::Exogenous) {
    // The exogenous treatment drops the conditioning blocks entirely.
    spec.time_means.clear();
    spec.initial_values.clear();
  }
  spec.validate();

  auto panel = apply_selection_rules(load_panel_file(panel_path));
  auto design = loan ? build_loan_design(panel, spec) : build_design(panel, spec);

  FitOptions opts;
  opts.threads = resolve_threads(threads);
  FitResult res = loan ? fit_loan_model(spec, design, opts) : fit(spec, design, opts);

  fs::path dir = prepare_out_dir(out);
  write_file(dir / "fit.json", res.to_json() + "\n");
  write_file(dir / "rrr.txt", render_rrr_table(res));
  CsvTable rrr;
  rrr.header = {"parameter", "coef", "se", "rrr", "rrr_se"};
  for (const auto& row : relative_risk_ratios(res))
    rrr.rows.push_back({row.name, format_double(row.coef), format_double(row.se),
                        format_double(row.rrr), format_double(row.rrr_se)});
  write_csv_file((dir / "rrr.csv").string(), rrr);

  Manifest m;
  m.subcommand = "fit";
  m.config = Json::parse(spec.to_json());
  m.config["loan"] = loan;
  m.inputs = {panel_path};
  if (!config_path.empty()) m.inputs.push_back(config_path);
  m.outputs = {"fit.json", "rrr.txt", "rrr.csv"};
  m.write(dir);

  if (!res.converged) {
    std::cerr << "fit did not converge: gradient norm " << res.gradient_norm
              << " after " << res.iterations << " iterations\n";
    return kNotConverged;
  }
  return kOk;
}

// ---- effects ----

std::vector<double> parse_grid(const std::string& text) {
  double lo, hi;
  int n;
  char c1, c2;
  std::istringstream in(text);
  if (!(in >> lo >> c1 >> hi >> c2 >> n) || c1 != ':' || c2 != ':' || n < 1)
    throw DataError("bad grid specification (expected lo:hi:n): " + text);
  std::vector<double> grid;
  for (int i = 0; i < n; ++i)
    grid.push_back(n == 1 ? lo : lo + (hi - lo) * i / static_cast<double>(n - 1));
  return grid;
}

int run_effects(const std::string& fit_path, const std::string& panel_path,
                const std::string& target, const std::string& grid_text,
                const std::string& out) {
  auto res = FitResult::from_json(read_file(fit_path));
  auto panel = apply_selection_rules(load_panel_file(panel_path));
  auto design = build_design(panel, res.spec);
  if (design.manifest() != res.manifest)
    throw DataError("panel does not reproduce the fitted design manifest");

  auto report = average_marginal_effect(res, design, target);

  fs::path dir = prepare_out_dir(out);
  CsvTable acsv;
  acsv.header = {"origin", "destination", "effect", "se", "n"};
  for (std::size_t o = 0; o < report.origins.size(); ++o)
    for (std::size_t d = 0; d < report.destinations.size(); ++d)
      acsv.rows.push_back(
          {report.origins[o], report.destinations[d],
           format_double(report.effects(static_cast<long>(o), static_cast<long>(d))),
           format_double(report.ses(static_cast<long>(o), static_cast<long>(d))),
           std::to_string(report.origin_counts[o])});
  write_csv_file((dir / "ame.csv").string(), acsv);

  Json ame_json;
  ame_json["target"] = report.target;
  ame_json["origins"] = report.origins;
  ame_json["destinations"] = report.destinations;
  Json cells = Json::array();
  for (std::size_t o = 0; o < report.origins.size(); ++o) {
    Json row = Json::array();
    for (std::size_t d = 0; d < report.destinations.size(); ++d) {
      Json cell;
      cell["effect"] = report.effects(static_cast<long>(o), static_cast<long>(d));
      cell["se"] = report.ses(static_cast<long>(o), static_cast<long>(d));
      row.push_back(cell);
    }
    cells.push_back(row);
  }
  ame_json["cells"] = cells;
  write_file(dir / "ame.json", ame_json.dump(2) + "\n");

  Manifest m;
  m.subcommand = "effects";
  m.config["target"] = target;
  m.inputs = {fit_path, panel_path};
  m.outputs = {"ame.csv", "ame.json"};

  if (!grid_text.empty()) {
    auto grid = effects_at_grid(res, target, parse_grid(grid_text));
    CsvTable gcsv;
    gcsv.header = {"value"};
    for (const auto& label : res.outcome_labels) gcsv.header.push_back("p_" + label);
    for (const auto& label : res.outcome_labels) gcsv.header.push_back("se_" + label);
    for (const auto& label : res.outcome_labels) gcsv.header.push_back("lo95_" + label);
    for (const auto& label : res.outcome_labels) gcsv.header.push_back("hi95_" + label);
    for (const auto& pt : grid) {
      std::vector<std::string> row = {format_double(pt.value)};
      for (long j = 0; j < pt.prob.size(); ++j) row.push_back(format_double(pt.prob[j]));
      for (long j = 0; j < pt.se.size(); ++j) row.push_back(format_double(pt.se[j]));
      for (long j = 0; j < pt.lo95.size(); ++j) row.push_back(format_double(pt.lo95[j]));
      for (long j = 0; j < pt.hi95.size(); ++j) row.push_back(format_double(pt.hi95[j]));
      gcsv.rows.push_back(std::move(row));
    }
    write_csv_file((dir / "grid.csv").string(), gcsv);
    m.config["grid"] = grid_text;
    m.outputs.push_back("grid.csv");
  }
  m.write(dir);
  return kOk;
}

// ---- policy ----

int run_policy(const std::string& fit_path, const std::string& scenario_path,
               const std::string& out) {
  auto res = FitResult::from_json(read_file(fit_path));
  Json sj = Json::parse(read_file(scenario_path));
  PolicyScenario scenario;
  scenario.name = sj.value("name", "policy");
  for (const auto& edit : sj.at("edits"))
    scenario.edits.push_back({edit.at("column").get<std::string>(),
                              edit.at("before").get<double>(),
                              edit.at("after").get<double>()});

  auto result = policy_simulation(res, scenario);

  fs::path dir = prepare_out_dir(out);
  Json j;
  j["name"] = result.name;
  j["outcomes"] = result.outcome_labels;
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  j["before"] = vec(result.before);
  j["before_se"] = vec(result.before_se);
  j["after"] = vec(result.after);
  j["after_se"] = vec(result.after_se);
  j["informal_change"] = result.informal_change;
  j["informal_change_se"] = result.informal_change_se;
  write_file(dir / "policy.json", j.dump(2) + "\n");

  CsvTable csv;
  csv.header = {"outcome", "before", "before_se", "after", "after_se"};
  for (std::size_t k = 0; k < result.outcome_labels.size(); ++k)
    csv.rows.push_back({result.outcome_labels[k],
                        format_double(result.before[static_cast<long>(k)]),
                        format_double(result.before_se[static_cast<long>(k)]),
                        format_double(result.after[static_cast<long>(k)]),
                        format_double(result.after_se[static_cast<long>(k)])});
  write_csv_file((dir / "policy.csv").string(), csv);

  Manifest m;
  m.subcommand = "policy";
  m.config = sj;
  m.inputs = {fit_path, scenario_path};
  m.outputs = {"policy.json", "policy.csv"};
  m.write(dir);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "dynlab: dynamic multinomial employment models with correlated random effects"};
  app.require_subcommand(1);

  std::string sim_config, sim_out;
  std::uint64_t sim_seed_value = 0;
  auto* sim = app.add_subcommand("simulate", "draw a synthetic panel");
  sim->add_option("--config", sim_config, "generator configuration (json)")->required();
  sim->add_option("--out", sim_out, "output directory")->required();
  auto* seed_opt = sim->add_option("--seed", sim_seed_value, "override the seed");

  std::string idx_components, idx_method = "zscore", idx_out;
  auto* idx = app.add_subcommand("index", "build the accessibility index");
  idx->add_option("--components", idx_components,
                  "community component csv (community_id, year, bank_presence, "
                  "dist_sber_km, dist_other_km, offices_per_1000)")
      ->required();
  idx->add_option("--method", idx_method, "zscore or pca")
      ->check(CLI::IsMember({"zscore", "pca"}));
  idx->add_option("--out", idx_out, "output directory")->required();

  std::string desc_panel, desc_out;
  bool desc_borrower = false, desc_disagg = false, desc_text = false;
  auto* desc = app.add_subcommand("describe", "transition matrices and summaries");
  desc->add_option("--panel", desc_panel, "panel csv")->required();
  desc->add_option("--out", desc_out, "output directory")->required();
  desc->add_flag("--by-borrower", desc_borrower, "split by loan uptake");
  desc->add_flag("--disaggregate", desc_disagg, "split informal origins by subtype");
  desc->add_flag("--text", desc_text, "also render plain-text tables");

  std::string ev_panel, ev_out;
  int ev_window = 5;
  auto* ev = app.add_subcommand("event-study", "switching around the first loan");
  ev->add_option("--panel", ev_panel, "panel csv")->required();
  ev->add_option("--window", ev_window, "years before/after the event");
  ev->add_option("--out", ev_out, "output directory")->required();

  std::string fit_panel, fit_config, fit_mode, fit_out;
  int fit_nodes = 0, fit_threads = 0;
  bool fit_loan_flag = false;
  auto* fitcmd = app.add_subcommand("fit", "maximum likelihood estimation");
  fitcmd->add_option("--panel", fit_panel, "panel csv")->required();
  fitcmd->add_option("--config", fit_config, "model specification (json)");
  fitcmd->add_option("--mode", fit_mode, "pooled, exogenous, wrs or heckman")
      ->check(CLI::IsMember({"pooled", "exogenous", "wrs", "heckman"}));
  fitcmd->add_option("--nodes", fit_nodes, "quadrature nodes per dimension");
  fitcmd->add_option("--threads", fit_threads, "worker threads");
  fitcmd->add_flag("--loan", fit_loan_flag, "estimate the loan equation instead");
  fitcmd->add_option("--out", fit_out, "output directory")->required();

  std::string eff_fit, eff_panel, eff_target = "cma_index", eff_grid, eff_out;
  auto* eff = app.add_subcommand("effects", "marginal effects and grids");
  eff->add_option("--fit", eff_fit, "fit.json from a previous run")->required();
  eff->add_option("--panel", eff_panel, "panel csv used for the fit")->required();
  eff->add_option("--target", eff_target, "covariate of interest");
  eff->add_option("--grid", eff_grid, "grid lo:hi:n for predicted shares");
  eff->add_option("--out", eff_out, "output directory")->required();

  std::string pol_fit, pol_scenario, pol_out;
  auto* pol = app.add_subcommand("policy", "before/after covariate scenarios");
  pol->add_option("--fit", pol_fit, "fit.json from a previous run")->required();
  pol->add_option("--scenario", pol_scenario, "scenario json")->required();
  pol->add_option("--out", pol_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (sim->parsed()) {
      std::optional<std::uint64_t> seed;
      if (seed_opt->count()) seed = sim_seed_value;
      return run_simulate(sim_config, sim_out, seed);
    }
    if (idx->parsed()) return run_index(idx_components, idx_method, idx_out);
    if (desc->parsed())
      return run_describe(desc_panel, desc_out, desc_borrower, desc_disagg, desc_text);
    if (ev->parsed()) return run_event_study(ev_panel, ev_window, ev_out);
    if (fitcmd->parsed())
      return run_fit(fit_panel, fit_config, fit_mode, fit_nodes, fit_threads,
                     fit_loan_flag, fit_out);
    if (eff->parsed())
      return run_effects(eff_fit, eff_panel, eff_target, eff_grid, eff_out);
    if (pol->parsed()) return run_policy(pol_fit, pol_scenario, pol_out);
  } catch (const Json::exception& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}
