#include "misalloc/config.hpp"

#include <filesystem>
#include <set>

#include <json.hpp>

#include "misalloc/csv.hpp"

namespace misalloc {

namespace {

using nlohmann::json;

std::string join(const std::vector<std::string>& v) {
  std::string s = "invalid config:";
  for (const auto& p : v) s += "\n  - " + p;
  return s;
}

// Reads known keys of one JSON object and records every problem.
class Obj {
 public:
  Obj(const json& j, std::string where, std::vector<std::string>& errs)
      : j_(j), where_(std::move(where)), errs_(errs) {
    if (!j_.is_object()) {
      errs_.push_back(where_ + ": expected an object");
      ok_ = false;
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!ok_ || !j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const std::exception&) {
      errs_.push_back(path(key) + ": wrong type");
    }
  }

  template <class T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!ok_ || !j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const std::exception&) {
      errs_.push_back(path(key) + ": wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    if (!ok_ || !j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() {
    if (!ok_) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) errs_.push_back(path(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string>& errs_;
  std::set<std::string> seen_;
  bool ok_ = true;
};

std::optional<Input> parse_input(const std::string& s) {
  if (s == "K") return Input::K;
  if (s == "L") return Input::L;
  if (s == "M") return Input::M;
  return std::nullopt;
}

DgpSpec parse_simulator(const json& j, std::vector<std::string>& errs) {
  DgpSpec d;
  Obj o(j, "simulator", errs);
  std::string tech = "cobb_douglas";
  o.get("technology", tech);
  CobbDouglas cd;
  if (const json* c = o.child("cobb_douglas")) {
    Obj p(*c, "simulator.cobb_douglas", errs);
    p.get("log_scale", cd.log_scale);
    p.get("alpha_k", cd.alpha_k);
    p.get("alpha_l", cd.alpha_l);
    p.get("alpha_m", cd.alpha_m);
    p.finish();
  }
  Translog tl;
  o.get("translog", tl.b);
  if (tech == "cobb_douglas") d.technology = cd;
  else if (tech == "translog") d.technology = tl;
  else errs.push_back("simulator.technology: expected \"cobb_douglas\" or \"translog\"");
  o.get("markov", d.markov);
  o.get("sd_eta", d.sd_eta);
  o.get("sd_eps", d.sd_eps);
  o.get("n_firms", d.n_firms);
  o.get("n_years", d.n_years);
  o.get("burn_in", d.burn_in);
  o.get("first_year", d.first_year);
  o.get("sectors", d.sectors);
  o.get("countries", d.countries);
  o.get("omega_init", d.omega_init);
  o.get("omega0_sd", d.omega0_sd);
  if (const json* c = o.child("prices")) {
    Obj p(*c, "simulator.prices", errs);
    auto& q = d.prices;
    p.get("material_const", q.material_const);
    p.get("material_omega", q.material_omega);
    p.get("material_trend", q.material_trend);
    p.get("material_sd", q.material_sd);
    p.get("wage_const", q.wage_const);
    p.get("wage_trend", q.wage_trend);
    p.get("wage_sd", q.wage_sd);
    p.get("price_const", q.price_const);
    p.get("price_trend", q.price_trend);
    p.finish();
  }
  if (const json* c = o.child("policy")) {
    Obj p(*c, "simulator.policy", errs);
    auto& q = d.policy;
    p.get("k_const", q.k_const);
    p.get("k_omega", q.k_omega);
    p.get("k_sd", q.k_sd);
    p.get("l_const", q.l_const);
    p.get("l_omega", q.l_omega);
    p.get("l_sd", q.l_sd);
    p.get("tau_k", q.tau_k);
    p.get("tau_l", q.tau_l);
    std::string labor = "predetermined";
    p.get("labor", labor);
    if (labor == "predetermined") q.labor = LaborRule::Predetermined;
    else if (labor == "flexible") q.labor = LaborRule::FlexibleFoc;
    else errs.push_back("simulator.policy.labor: expected \"predetermined\" or \"flexible\"");
    p.finish();
  }
  if (const json* c = o.child("regime")) {
    Obj p(*c, "simulator.regime", errs);
    RegimeShift r;
    p.get("countries", r.countries);
    p.get("start_year", r.start_year);
    p.get("k_sd_scale", r.k_sd_scale);
    p.finish();
    d.regime = r;
  }
  o.finish();
  return d;
}

InputConfig parse_input_config(const json& j, std::vector<std::string>& errs) {
  InputConfig in;
  Obj o(j, "input", errs);
  o.get("path", in.path);
  o.get("sector_level", in.sector_level);
  o.get("clean_key", in.clean_key);
  if (const json* c = o.child("columns")) {
    Obj p(*c, "input.columns", errs);
    auto& m = in.columns;
    p.get("firm_id", m.firm_id);
    p.get("year", m.year);
    p.get("sector", m.sector);
    p.get("country", m.country);
    p.get("Y", m.Y);
    p.get("K", m.K);
    p.get("L", m.L);
    p.get("M", m.M);
    p.get("wage_bill", m.wage_bill);
    p.get("materials_cost", m.materials_cost);
    p.get("output_price", m.output_price);
    p.finish();
  }
  o.finish();
  return in;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : ValidationError(join(problems)), problems_(std::move(problems)) {}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Source: return "source";
    case Stage::Estimate: return "estimate";
    case Stage::Functionals: return "functionals";
    case Stage::Analytics: return "analytics";
    case Stage::LaborTest: return "labor_test";
    case Stage::EventStudy: return "event_study";
    case Stage::Report: return "report";
  }
  return "?";
}

bool StageToggles::enabled(Stage s) const {
  switch (s) {
    case Stage::Source: return true;
    case Stage::Estimate: return estimate;
    case Stage::Functionals: return functionals;
    case Stage::Analytics: return analytics;
    case Stage::LaborTest: return labor_test;
    case Stage::EventStudy: return event_study;
    case Stage::Report: return report;
  }
  return false;
}

std::vector<std::string> config_problems(const RunConfig& c) {
  std::vector<std::string> p;
  if (c.input && c.simulator) p.push_back("exactly one data source: both input and simulator given");
  if (!c.input && !c.simulator) p.push_back("exactly one data source: neither input nor simulator given");
  if (c.input) {
    if (c.input->path.empty()) p.push_back("input.path: empty");
    else if (!std::filesystem::is_regular_file(c.input->path))
      p.push_back("input.path: no such file: " + c.input->path);
    if (c.input->sector_level < 1) p.push_back("input.sector_level: must be >= 1");
    if (c.input->clean_key) {
      try {
        parse_variable(*c.input->clean_key);
      } catch (const std::exception&) {
        p.push_back("input.clean_key: unknown variable " + *c.input->clean_key);
      }
    }
  }
  if (c.simulator) {
    try {
      validate(*c.simulator);
    } catch (const std::exception& e) {
      p.push_back(std::string("simulator: ") + e.what());
    }
  }
  if (c.output_dir.empty()) p.push_back("output_dir: empty");

  // Each stage and the stage it needs.
  const std::pair<Stage, Stage> deps[] = {{Stage::Functionals, Stage::Estimate},
                                          {Stage::Analytics, Stage::Functionals},
                                          {Stage::LaborTest, Stage::Estimate},
                                          {Stage::EventStudy, Stage::Analytics},
                                          {Stage::Report, Stage::Estimate}};
  for (const auto& [s, need] : deps)
    if (c.stages.enabled(s) && !c.stages.enabled(need))
      p.push_back(std::string("stages.") + stage_name(s) + " needs stages." + stage_name(need));

  const auto& sv = c.solver;
  if (sv.share.rel_tol <= 0 || sv.share.grad_tol <= 0) p.push_back("solver: tolerances must be positive");
  if (sv.share.max_iter < 1) p.push_back("solver.max_iter: must be >= 1");
  if (sv.share.multistart < 1) p.push_back("solver.multistart: must be >= 1");
  if (sv.gmm.degree < 1 || sv.gmm.degree > 3) p.push_back("solver.degree: must be 1, 2 or 3");
  if (sv.gmm.c_order < 1 || sv.gmm.c_order > 2) p.push_back("solver.c_order: must be 1 or 2");
  if (sv.gmm.max_outer < 1) p.push_back("solver.max_outer: must be >= 1");
  if (sv.gmm.alpha_tol <= 0) p.push_back("solver.alpha_tol: must be positive");

  if (c.bootstrap.replicates < 0 || c.bootstrap.replicates == 1)
    p.push_back("bootstrap.replicates: must be 0 or >= 2");
  if (c.stages.labor_test && c.bootstrap.labor_replicates < 2)
    p.push_back("bootstrap.labor_replicates: must be >= 2");
  if (c.bootstrap.stage2_draws && *c.bootstrap.stage2_draws < 1)
    p.push_back("bootstrap.stage2_draws: must be >= 1");

  if (c.stages.event_study) {
    const auto& e = c.event_study;
    if (e.treated_countries.empty()) p.push_back("event_study.treated_countries: empty");
    if (e.inputs.empty()) p.push_back("event_study.inputs: empty");
    if (e.n_boot < 0 || e.n_boot == 1) p.push_back("event_study.n_boot: must be 0 or >= 2");
  }
  return p;
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError({std::string("not valid JSON: ") + e.what()});
  }
  std::vector<std::string> errs;
  RunConfig c;
  Obj o(j, "", errs);
  o.get("seed", c.seed);
  o.get("output_dir", c.output_dir);
  if (const json* x = o.child("input")) c.input = parse_input_config(*x, errs);
  if (const json* x = o.child("simulator")) c.simulator = parse_simulator(*x, errs);
  if (const json* x = o.child("stages")) {
    Obj s(*x, "stages", errs);
    s.get("estimate", c.stages.estimate);
    s.get("functionals", c.stages.functionals);
    s.get("analytics", c.stages.analytics);
    s.get("labor_test", c.stages.labor_test);
    s.get("event_study", c.stages.event_study);
    s.get("report", c.stages.report);
    s.finish();
  }
  if (const json* x = o.child("solver")) {
    Obj s(*x, "solver", errs);
    auto& sh = c.solver.share;
    auto& g = c.solver.gmm;
    s.get("rel_tol", sh.rel_tol);
    s.get("grad_tol", sh.grad_tol);
    s.get("max_iter", sh.max_iter);
    s.get("multistart", sh.multistart);
    s.get("training_subsample", sh.training_subsample);
    s.get("training_firms", sh.training_firms);
    s.get("degree", g.degree);
    s.get("c_order", g.c_order);
    s.get("max_outer", g.max_outer);
    s.get("alpha_tol", g.alpha_tol);
    std::string dm = "ols";
    s.get("delta_moments", dm);
    if (dm == "ols") g.delta_instruments = kernels::Instruments::LaggedOmega;
    else if (dm == "script_y") g.delta_instruments = kernels::Instruments::LaggedScriptY;
    else errs.push_back("solver.delta_moments: expected \"ols\" or \"script_y\"");
    s.finish();
  }
  if (const json* x = o.child("bootstrap")) {
    Obj s(*x, "bootstrap", errs);
    s.get("replicates", c.bootstrap.replicates);
    s.get("labor_replicates", c.bootstrap.labor_replicates);
    s.get("stage2_draws", c.bootstrap.stage2_draws);
    s.get("labor_subset", c.bootstrap.labor_subset);
    s.finish();
  }
  if (const json* x = o.child("analytics")) {
    Obj s(*x, "analytics", errs);
    s.get("base_year", c.analytics.base_year);
    s.get("gev", c.analytics.gev);
    s.finish();
  }
  if (const json* x = o.child("event_study")) {
    Obj s(*x, "event_study", errs);
    auto& e = c.event_study;
    s.get("treated_countries", e.treated_countries);
    s.get("treatment_year", e.treatment_year);
    std::vector<std::string> inputs;
    s.get("inputs", inputs);
    if (!inputs.empty()) {
      e.inputs.clear();
      for (const auto& v : inputs) {
        if (auto in = parse_input(v)) e.inputs.push_back(*in);
        else errs.push_back("event_study.inputs: unknown input " + v);
      }
    }
    s.get("covariates", e.covariates);
    s.get("n_boot", e.n_boot);
    s.finish();
  }
  o.finish();
  auto more = config_problems(c);
  errs.insert(errs.end(), more.begin(), more.end());
  if (!errs.empty()) throw ConfigError(errs);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError({"cannot read config " + path});
  }
  return parse_config(text);
}

}  // namespace misalloc
