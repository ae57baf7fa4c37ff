#include "misalloc/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "misalloc/analytics.hpp"
#include "misalloc/csv.hpp"
#include "misalloc/dgp.hpp"
#include "misalloc/event_study.hpp"
#include "misalloc/functionals.hpp"
#include "misalloc/gmm.hpp"
#include "misalloc/inference.hpp"
#include "misalloc/panel.hpp"
#include "misalloc/rng.hpp"

namespace fs = std::filesystem;

namespace misalloc {

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

namespace {

using ojson = nlohmann::ordered_json;

const char* kInputName[3] = {"K", "L", "M"};

struct Writer {
  fs::path dir;
  std::vector<ManifestEntry> entries;

  void put(const std::string& name, const std::string& content) {
    write_file((dir / name).string(), content);
    entries.push_back({name, sha256_hex(content), content.size()});
  }
};

std::string manifest_text(std::uint64_t seed, const std::vector<std::string>& stages,
                          const std::vector<ManifestEntry>& entries) {
  ojson j;
  j["seed"] = seed;
  j["stages"] = stages;
  ojson a = ojson::array();
  for (const auto& e : entries) a.push_back({{"name", e.name}, {"sha256", e.sha256}, {"bytes", e.bytes}});
  j["artifacts"] = a;
  return j.dump(2) + "\n";
}

std::string truth_csv(const FirmPanel& p, const std::vector<TruthRecord>& t) {
  std::ostringstream o;
  o << "firm_id,year,omega,omega_lag,eta,eps,elas_K,elas_L,elas_M,log_mp_K,log_mp_L,log_mp_M,"
       "log_material_price,log_wage\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& r = t[i];
    o << csv_field(p[i].firm_id) << ',' << p[i].year << ',' << fmt(r.omega) << ',' << fmt(r.omega_lag)
      << ',' << fmt(r.eta) << ',' << fmt(r.eps);
    for (double x : r.elas) o << ',' << fmt(x);
    for (double x : r.log_mp) o << ',' << fmt(x);
    o << ',' << fmt(r.log_material_price) << ',' << fmt(r.log_wage) << '\n';
  }
  return o.str();
}

bool complete(const FirmYear& r) {
  return r.Y && r.K && r.L && r.M && r.wage_bill && r.materials_cost;
}

struct CountryPart {
  std::string country;
  FirmPanel panel;
  std::vector<std::size_t> index;  // position in the full panel
  std::optional<ProductionModel> model;
  std::optional<FirmFunctionals> func;
  std::optional<DispersionTable> table;
};

std::vector<CountryPart> split_by_country(const FirmPanel& p) {
  std::map<std::string, std::pair<std::vector<FirmYear>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& g = groups[p[i].country];
    g.first.push_back(p[i]);
    g.second.push_back(i);
  }
  std::vector<CountryPart> out;
  for (auto& [c, g] : groups) {
    CountryPart part;
    part.country = c;
    part.panel = FirmPanel(std::move(g.first), p.sector_level());
    part.index = std::move(g.second);
    out.push_back(std::move(part));
  }
  return out;
}

std::string label(const std::string& country) { return country.empty() ? "All" : country; }

std::array<double, 5> elasticity_summary(const ProductionModel& m, const EstimationSample& s) {
  std::array<double, 3> sum{};
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto e = elasticities(m.gamma, m.alpha, s.k[i], s.l[i], s.m[i]);
    for (int j = 0; j < 3; ++j) sum[static_cast<std::size_t>(j)] += e[static_cast<std::size_t>(j)];
  }
  const double n = static_cast<double>(s.size());
  const double k = sum[0] / n, l = sum[1] / n, mm = sum[2] / n;
  return {k, l, mm, k + l + mm, k / l};
}

std::vector<std::string> stage_list(const StageToggles& t) {
  std::vector<std::string> s;
  for (Stage st : {Stage::Source, Stage::Estimate, Stage::Functionals, Stage::Analytics,
                   Stage::LaborTest, Stage::EventStudy, Stage::Report})
    if (t.enabled(st)) s.push_back(stage_name(st));
  return s;
}

}  // namespace

RunResult run(const RunConfig& c) {
  if (auto p = config_problems(c); !p.empty()) throw ConfigError(p);
  Writer w;
  w.dir = c.output_dir;
  std::error_code ec;
  fs::create_directories(w.dir, ec);
  if (ec || !fs::is_directory(w.dir)) throw ValidationError("output_dir not writable: " + c.output_dir);
  {
    std::ofstream probe(w.dir / ".write_probe");
    if (!probe) throw ValidationError("output_dir not writable: " + c.output_dir);
  }
  fs::remove(w.dir / ".write_probe");

  // Source
  FirmPanel panel;
  if (c.simulator) {
    DgpSpec spec = *c.simulator;
    spec.seed = derive_seed(c.seed, "simulate", 0);
    Simulation sim = simulate(spec);
    panel = std::move(sim.panel);
    w.put("panel.csv", to_csv(panel));
    w.put("truth.csv", truth_csv(panel, sim.truth));
  } else {
    IngestResult in = ingest_csv(c.input->path, c.input->columns, c.input->sector_level);
    auto report = nlohmann::ordered_json::parse(drop_report_json(in.report));
    const std::size_t before = in.panel.size();
    if (c.input->clean_key) {
      panel = clean_panel(in.panel, *c.input->clean_key,
                          {Variable::Y, Variable::K, Variable::L, Variable::M, Variable::WageBill,
                           Variable::MaterialsCost});
    } else {
      std::vector<FirmYear> keep;
      for (const auto& r : in.panel.records())
        if (complete(r)) keep.push_back(r);
      panel = FirmPanel(std::move(keep), in.panel.sector_level());
    }
    report["incomplete_dropped"] = before - panel.size();
    w.put("panel.csv", to_csv(panel));
    w.put("drop_report.json", report.dump(2) + "\n");
  }
  if (panel.empty()) throw EstimationError("no complete records to analyze");

  auto parts = split_by_country(panel);
  ReportData rep;
  EstimationOptions eo = c.solver;

  // Estimation, country by country
  if (c.stages.estimate) {
    ojson models;
    for (std::size_t ci = 0; ci < parts.size(); ++ci) {
      auto& part = parts[ci];
      EstimationOptions o = eo;
      o.share.seed = derive_seed(c.seed, "share", ci);
      EstimationSample s = make_sample(part.panel);
      part.model = estimate(s, o);
      models[label(part.country)] = ojson::parse(model_json(*part.model, o));

      ElasticityRow er;
      er.country = label(part.country);
      er.value = elasticity_summary(*part.model, s);
      ProductivityRow pr;
      pr.country = er.country;
      pr.delta = part.model->delta.d;
      if (c.bootstrap.replicates >= 2) {
        BootstrapPlan plan;
        plan.n_replicates = c.bootstrap.replicates;
        plan.seed = derive_seed(c.seed, "bootstrap", ci);
        plan.statistics = {"elas_K", "elas_L", "elas_M", "sum", "K/L", "d0", "d1", "d2", "d3"};
        EstimationOptions rep_opts = warm_start_options(o, *part.model);
        rep_opts.share.exec = Execution::Serial;
        rep_opts.gmm.exec = Execution::Serial;
        auto br = bootstrap_pipeline(part.panel, plan, [&](const FirmPanel& sample, std::uint64_t) {
          EstimationSample ss = make_sample(sample);
          auto m = estimate(ss, rep_opts);
          auto e = elasticity_summary(m, ss);
          std::vector<double> v(e.begin(), e.end());
          v.insert(v.end(), m.delta.d.begin(), m.delta.d.end());
          return v;
        });
        w.put("bootstrap_" + label(part.country) + ".csv", bootstrap_csv(br));
        if (br.se.size() == 9) {
          er.se = std::array<double, 5>{br.se[0], br.se[1], br.se[2], br.se[3], br.se[4]};
          pr.delta_se = std::array<double, 4>{br.se[5], br.se[6], br.se[7], br.se[8]};
        }
      }
      rep.elasticities.push_back(er);
      rep.productivity.push_back(pr);
    }
    w.put("model.json", models.dump(2) + "\n");
  }

  // Functionals
  if (c.stages.functionals) {
    FirmFunctionals all;
    all.rows.resize(panel.size());
    for (std::size_t ci = 0; ci < parts.size(); ++ci) {
      auto& part = parts[ci];
      part.func = compute_functionals(part.panel, *part.model);
      for (std::size_t i = 0; i < part.index.size(); ++i) all.rows[part.index[i]] = part.func->rows[i];
      for (int j = 0; j < 3; ++j) all.nonpositive_mp[static_cast<std::size_t>(j)] += part.func->nonpositive_mp[static_cast<std::size_t>(j)];
      if (c.analytics.gev) {
        std::vector<double> tfp;
        for (const auto& r : part.func->rows) tfp.push_back(std::exp(r.nu));
        try {
          GevFit g = fit_gev(tfp);
          GevRow gr;
          gr.xi = g.xi;
          gr.sigma = g.sigma;
          gr.mu = g.mu;
          gr.se = std::array<double, 3>{g.se_xi, g.se_sigma, g.se_mu};
          gr.mean = g.mean;
          rep.productivity[ci].gev = gr;
        } catch (const std::exception&) {
        }
      }
    }
    w.put("functionals.csv", functionals_csv(panel, all));
  }
  if (c.stages.estimate) {
    ojson e;
    ojson a = ojson::array(), b = ojson::array();
    for (const auto& r : rep.elasticities) a.push_back(to_json(r));
    for (const auto& r : rep.productivity) b.push_back(to_json(r));
    e["elasticities"] = a;
    e["productivity"] = b;
    w.put("estimates.json", e.dump(2) + "\n");
  }

  // Analytics
  DispersionTable merged;
  if (c.stages.analytics) {
    ojson detail = ojson::array();
    for (auto& part : parts) {
      part.table = build_dispersion_table(part.panel, *part.func);
      merged.cells.insert(merged.cells.end(), part.table->cells.begin(), part.table->cells.end());
      merged.excluded_cells += part.table->excluded_cells;
      S2Row tot{label(part.country), {}}, ch{label(part.country), {}}, cov{label(part.country), {}};
      ojson d;
      d["country"] = label(part.country);
      for (int x = 0; x < 3; ++x) {
        const Input in = static_cast<Input>(x);
        try {
          auto s = s2_total(*part.table, in, sector_betas(part.panel, *part.func, in));
          tot.values.push_back(s.value);
          d[std::string("total_") + kInputName[x]] = {{"value", s.value}, {"uninformative", s.uninformative}, {"n_cells", s.n_cells}};
        } catch (const std::exception& e) {
          tot.values.push_back(std::nullopt);
          d[std::string("total_") + kInputName[x]] = {{"error", e.what()}};
        }
        try {
          auto betas = sector_channel_betas(part.panel, *part.func, in);
          auto a = s2_channels(*part.table, in, betas);
          auto b = s2_channels_cov(*part.table, in, betas);
          for (int k = 0; k < 3; ++k) {
            ch.values.push_back(a[static_cast<std::size_t>(k)].value);
            cov.values.push_back(b[static_cast<std::size_t>(k)].value);
          }
        } catch (const std::exception& e) {
          for (int k = 0; k < 3; ++k) {
            ch.values.push_back(std::nullopt);
            cov.values.push_back(std::nullopt);
          }
          d[std::string("channels_") + kInputName[x]] = {{"error", e.what()}};
        }
      }
      rep.s2_total.push_back(tot);
      rep.s2_channels.push_back(ch);
      rep.s2_channels_cov.push_back(cov);
      detail.push_back(d);
    }
    w.put("dispersion.csv", dispersion_csv(merged));
    w.put("series.csv", series_csv(dispersion_series(merged, c.analytics.base_year)));
    ojson j;
    ojson t = ojson::array(), a = ojson::array(), b = ojson::array();
    for (const auto& r : rep.s2_total) t.push_back(to_json(r));
    for (const auto& r : rep.s2_channels) a.push_back(to_json(r));
    for (const auto& r : rep.s2_channels_cov) b.push_back(to_json(r));
    j["total"] = t;
    j["channels"] = a;
    j["channels_cov"] = b;
    j["detail"] = detail;
    j["excluded_cells"] = merged.excluded_cells;
    w.put("s2.json", j.dump(2) + "\n");
  }

  // Flexible labor test
  if (c.stages.labor_test) {
    ojson rows = ojson::array();
    for (std::size_t ci = 0; ci < parts.size(); ++ci) {
      const auto& part = parts[ci];
      BootstrapPlan plan;
      plan.n_replicates = c.bootstrap.labor_replicates;
      plan.seed = derive_seed(c.seed, "labor", ci);
      LaborTestOptions lo;
      lo.stage2_draws = c.bootstrap.stage2_draws;
      lo.subset = c.bootstrap.labor_subset;
      lo.estimation = eo;
      lo.estimation.share.seed = derive_seed(c.seed, "share", ci);
      TestResult t = two_stage_test_bootstrap(part.panel, plan, lo);
      LaborRow r;
      r.country = label(part.country);
      r.T = t.T;
      r.ci = {{{t.ci90.lo, t.ci90.hi}, {t.ci95.lo, t.ci95.hi}, {t.ci99.lo, t.ci99.hi}}};
      r.n = t.n;
      rep.labor.push_back(r);
      auto j = to_json(r);
      j["n_draws"] = t.n_draws;
      j["planned"] = t.planned;
      j["succeeded"] = t.succeeded;
      j["dropped"] = t.dropped;
      j["quantile_method"] = t.quantile_method;
      rows.push_back(j);
    }
    ojson j;
    j["subset"] = c.bootstrap.labor_subset;
    j["rows"] = rows;
    w.put("labor_test.json", j.dump(2) + "\n");
  }

  // Event study
  if (c.stages.event_study) {
    const auto& e = c.event_study;
    std::set<std::string> treated(e.treated_countries.begin(), e.treated_countries.end());
    ojson cols = ojson::array();
    std::size_t col = 0;
    for (Input x : e.inputs) {
      for (bool cov : {false, true}) {
        if (cov && !e.covariates) continue;
        DidPanel dp = did_panel_from_table(merged, x, treated, e.treatment_year, cov);
        AttOptions ao{cov};
        AttResult r = e.n_boot > 0
                          ? wild_cluster_bootstrap(dp, ao, e.n_boot, derive_seed(c.seed, "wild", col))
                          : att_group_time(dp, ao);
        const std::string tag = std::string(kInputName[static_cast<int>(x)]) + (cov ? "_cov" : "");
        w.put("event_study_" + tag + ".csv", event_study_csv(r));
        DidColumn dc;
        dc.label = std::string("Var(mp^") + kInputName[static_cast<int>(x)] + ")";
        dc.overall = {r.overall, r.overall_se, normal_stars(r.overall, r.overall_se)};
        if (r.pre) dc.pre = DidEntry{*r.pre, *r.pre_se, normal_stars(*r.pre, *r.pre_se)};
        for (const auto& y : r.post) dc.years.emplace_back(y.time, DidEntry{y.att, y.se, normal_stars(y.att, y.se)});
        dc.n = r.n_obs;
        if (cov) dc.controls = {"Vol(TFP)", "HHI"};
        dc.inference = r.inference;
        rep.did.push_back(dc);
        auto j = to_json(dc);
        j["dropped_years"] = r.dropped_years;
        j["n_units"] = r.n_units;
        j["overall_ci"] = {r.overall_ci_lo, r.overall_ci_hi};
        cols.push_back(j);
        ++col;
      }
    }
    ojson j;
    j["treatment_year"] = e.treatment_year;
    j["treated_countries"] = e.treated_countries;
    j["columns"] = cols;
    w.put("event_study.json", j.dump(2) + "\n");
  }

  const auto stages = stage_list(c.stages);
  RunResult res;
  res.manifest_path = (w.dir / "manifest.json").string();
  write_file(res.manifest_path, manifest_text(c.seed, stages, w.entries));
  if (c.stages.report) write_report(res.manifest_path);
  auto m = nlohmann::json::parse(read_file(res.manifest_path));
  for (const auto& a : m.at("artifacts"))
    res.artifacts.push_back({a.at("name").get<std::string>(), a.at("sha256").get<std::string>(),
                             a.at("bytes").get<std::size_t>()});
  return res;
}

namespace {

struct Manifest {
  fs::path dir;
  nlohmann::ordered_json j;
  std::optional<std::string> text(const std::string& name) const {
    for (const auto& a : j.at("artifacts")) {
      if (a.at("name").get<std::string>() != name) continue;
      const fs::path p = dir / name;
      if (!fs::is_regular_file(p)) throw MissingArtifact(name);
      std::string t = read_file(p.string());
      if (sha256_hex(t) != a.at("sha256").get<std::string>())
        throw MissingArtifact(name + " (content hash mismatch)");
      return t;
    }
    return std::nullopt;
  }
};

Manifest load_manifest(const std::string& path) {
  if (!fs::is_regular_file(path)) throw MissingArtifact(fs::path(path).filename().string());
  Manifest m;
  m.dir = fs::path(path).parent_path();
  m.j = nlohmann::ordered_json::parse(read_file(path));
  return m;
}

}  // namespace

ReportData load_report_data(const std::string& manifest_path) {
  Manifest m = load_manifest(manifest_path);
  ReportData d;
  auto est = m.text("estimates.json");
  if (!est) throw MissingArtifact("estimates.json");
  auto e = nlohmann::json::parse(*est);
  for (const auto& r : e.at("elasticities")) d.elasticities.push_back(elasticity_row_from(r));
  for (const auto& r : e.at("productivity")) d.productivity.push_back(productivity_row_from(r));
  if (auto s = m.text("s2.json")) {
    auto j = nlohmann::json::parse(*s);
    for (const auto& r : j.at("total")) d.s2_total.push_back(s2_row_from(r));
    for (const auto& r : j.at("channels")) d.s2_channels.push_back(s2_row_from(r));
    for (const auto& r : j.at("channels_cov")) d.s2_channels_cov.push_back(s2_row_from(r));
  }
  if (auto s = m.text("labor_test.json")) {
    auto j = nlohmann::json::parse(*s);
    for (const auto& r : j.at("rows")) d.labor.push_back(labor_row_from(r));
    auto sub = j.at("subset").get<std::vector<std::string>>();
    if (!sub.empty()) {
      std::string t = "sectors";
      for (const auto& x : sub) t += " " + x;
      d.labor_subset = t;
    }
  }
  if (auto s = m.text("event_study.json")) {
    auto j = nlohmann::json::parse(*s);
    for (const auto& c : j.at("columns")) d.did.push_back(did_column_from(c));
  }
  return d;
}

std::string write_report(const std::string& manifest_path) {
  const std::string md = render_report(load_report_data(manifest_path));
  Manifest m = load_manifest(manifest_path);
  write_file((m.dir / "report.md").string(), md);
  auto& arts = m.j["artifacts"];
  nlohmann::ordered_json kept = nlohmann::ordered_json::array();
  for (const auto& a : arts)
    if (a.at("name").get<std::string>() != "report.md") kept.push_back(a);
  kept.push_back({{"name", "report.md"}, {"sha256", sha256_hex(md)}, {"bytes", md.size()}});
  arts = kept;
  write_file(manifest_path, m.j.dump(2) + "\n");
  return md;
}

}  // namespace misalloc
