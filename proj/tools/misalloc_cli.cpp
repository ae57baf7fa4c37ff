#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <omp.h>

#include "misalloc/config.hpp"
#include "misalloc/pipeline.hpp"

using namespace misalloc;

namespace {

// Stages a verb runs; run-all keeps the config toggles.
void restrict_stages(const std::string& verb, StageToggles& s) {
  if (verb == "run-all") return;
  s = StageToggles{false, false, false, false, false, false};
  if (verb == "simulate") return;
  s.estimate = true;
  if (verb == "test-labor") {
    s.labor_test = true;
    return;
  }
  s.functionals = true;
  if (verb == "estimate") return;
  s.analytics = true;
  if (verb == "event-study") s.event_study = true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Production function estimation and misallocation analysis"};
  app.require_subcommand(1);
  std::string config_path, out;
  std::uint64_t seed = 0;
  int threads = 0;
  const std::pair<const char*, const char*> verbs[] = {
      {"simulate", "simulate (or ingest) a firm panel"},
      {"estimate", "estimate the production function and firm-level functionals"},
      {"analyze", "estimate, then dispersion tables and S2 statistics"},
      {"test-labor", "estimate, then the two-stage bootstrap flexible labor test"},
      {"event-study", "estimate, analyze, then the difference-in-differences event study"},
      {"report", "render report.md from an output directory's manifest"},
      {"run-all", "run every stage enabled in the config"}};
  std::vector<CLI::App*> subs;
  std::vector<CLI::Option*> seed_opts;
  for (const auto& [name, desc] : verbs) {
    auto* s = app.add_subcommand(name, desc);
    s->add_option("--config", config_path, "JSON run config");
    seed_opts.push_back(s->add_option("--seed", seed, "master seed (overrides the config)"));
    s->add_option("--threads", threads, "OpenMP thread cap")->check(CLI::NonNegativeNumber);
    s->add_option("--out", out, "output directory (overrides the config)");
    subs.push_back(s);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (threads > 0) omp_set_num_threads(threads);
  std::string verb;
  bool seed_given = false;
  for (std::size_t i = 0; i < subs.size(); ++i)
    if (subs[i]->parsed()) {
      verb = subs[i]->get_name();
      seed_given = seed_opts[i]->count() > 0;
    }

  try {
    if (verb == "report") {
      std::string dir = out;
      if (dir.empty()) {
        if (config_path.empty()) throw ValidationError("report needs --out or --config");
        dir = load_config(config_path).output_dir;
      }
      const std::string manifest = (std::filesystem::path(dir) / "manifest.json").string();
      write_report(manifest);
      std::cout << (std::filesystem::path(dir) / "report.md").string() << "\n";
      return 0;
    }
    if (config_path.empty()) throw ValidationError("--config is required");
    RunConfig cfg = load_config(config_path);
    if (seed_given) cfg.seed = seed;
    if (!out.empty()) cfg.output_dir = out;
    restrict_stages(verb, cfg.stages);
    RunResult r = run(cfg);
    std::cout << r.manifest_path << "\n";
    for (const auto& a : r.artifacts) std::cout << "  " << a.name << " " << a.sha256 << "\n";
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
