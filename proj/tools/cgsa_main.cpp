#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cgsa/experiment.hpp"

namespace {

std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects KEY=VALUE, got '" + s + "'");
    auto trim = [](std::string v) {
      while (!v.empty() && (v.front() == ' ' || v.front() == '\t')) v.erase(v.begin());
      while (!v.empty() && (v.back() == ' ' || v.back() == '\t')) v.pop_back();
      return v;
    };
    out.emplace_back(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return out;
}

cgsa::RunConfig build_config(const std::string& config_path,
                             const std::vector<std::string>& sets) {
  auto overrides = parse_overrides(sets);
  cgsa::RunConfig cfg = config_path.empty()
                            ? cgsa::parse_config("", overrides)
                            : cgsa::load_config_file(config_path, overrides);
  if (const char* env = std::getenv("CGSA_OUT_DIR")) {
    bool out_dir_set = false;
    for (const auto& [k, _] : overrides) out_dir_set |= k == "out_dir";
    if (!out_dir_set && cfg.out_dir == "out") cfg.out_dir = env;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slot-aware source-free domain-adaptive detection testbed"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "Config file (key = value lines)");
  app.add_option("--set", sets, "Override a config key, KEY=VALUE")
      ->take_all();

  auto* gen = app.add_subcommand("gen-data", "Write the four dataset splits");
  auto* pre = app.add_subcommand("pretrain", "Source-domain pretraining");
  auto* ada = app.add_subcommand("adapt", "Target-domain adaptation");
  auto* eva = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* the = app.add_subcommand("theory", "Run the analytic validation suite");
  auto* viz = app.add_subcommand("viz-masks", "Export slot-mask visualizations");
  auto* abl = app.add_subcommand("ablate", "Run the ablation grids");

  CLI11_PARSE(app, argc, argv);

  try {
    cgsa::RunConfig cfg = build_config(config_path, sets);
    if (gen->parsed()) {
      cgsa::run_gen_data(cfg);
      std::printf("datasets written under %s\n", cfg.data_dir.c_str());
    } else if (pre->parsed()) {
      auto summary = cgsa::run_pretrain(cfg);
      std::printf("pretrain done: train F1 %.4f, eval F1 %.4f\n",
                  summary["f1_student_train"], summary["f1_student_eval"]);
    } else if (ada->parsed()) {
      auto summary = cgsa::run_adapt(cfg);
      std::printf("adapt done: teacher eval F1 %.4f, student eval F1 %.4f\n",
                  summary["f1_teacher_eval"], summary["f1_student_eval"]);
    } else if (eva->parsed()) {
      cgsa::EvalResult r = cgsa::run_eval(cfg);
      std::printf("eval: mAP@50 %.4f, F1 %.4f (tp %zu fp %zu fn %zu)\n",
                  r.mean_ap, r.f1, r.tp, r.fp, r.fn);
    } else if (the->parsed()) {
      bool ok = cgsa::run_theory(cfg);
      std::printf("theory report written to %s/theory_report.txt\n",
                  cfg.out_dir.c_str());
      return ok ? 0 : 1;
    } else if (viz->parsed()) {
      cgsa::run_viz_masks(cfg);
      std::printf("mask visualizations written under %s\n", cfg.out_dir.c_str());
    } else if (abl->parsed()) {
      auto rows = cgsa::run_ablate(cfg);
      std::printf("ablation grid written to %s/ablate_summary.csv (%zu rows)\n",
                  cfg.out_dir.c_str(), rows.size());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
