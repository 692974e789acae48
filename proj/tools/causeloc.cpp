#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "causeloc/csv.hpp"
#include "causeloc/error.hpp"
#include "causeloc/matrix_store.hpp"
#include "causeloc/pipeline.hpp"
#include "causeloc/region.hpp"
#include "causeloc/retrieval.hpp"
#include "causeloc/scoring.hpp"
#include "causeloc/simulator.hpp"
#include "causeloc/stats.hpp"
#include "causeloc/stimulus.hpp"
#include "causeloc/verdict.hpp"

namespace fs = std::filesystem;
using namespace causeloc;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, path + ": " + e.what());
  }
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    csv::write_file(path, text);
  }
}

std::vector<double> parse_doubles(const std::string& list) {
  std::vector<double> out;
  if (list.empty()) return out;
  for (const auto& field : csv::split_row(list)) {
    try {
      out.push_back(std::stod(field));
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "not a number: '" + field + "'");
    }
  }
  return out;
}

CoverageLevel parse_level(const std::string& s) {
  if (s == "high" || s == "High") return CoverageLevel::High;
  if (s == "low" || s == "Low") return CoverageLevel::Low;
  fail(ErrorCode::InvalidArgument, "coverage must be high or low");
}

struct InputArgs {
  std::string matrix;
  std::string manifest;
  std::string split = "train";
  std::size_t k = kDefaultHardNegatives;
};

void add_inputs(CLI::App* app, InputArgs& a) {
  app->add_option("--matrix", a.matrix, "response matrix (BCRM)")->required();
  app->add_option("--manifest", a.manifest, "stimulus manifest (JSONL)")->required();
  app->add_option("--split", a.split, "train or eval");
  app->add_option("--k", a.k, "hardest negatives per voxel");
}

std::pair<ResponseMatrix, ScoringInputs> load_inputs(const InputArgs& a) {
  auto m = read_matrix(a.matrix);
  auto manifest = read_manifest(a.manifest);
  auto in = manifest_scoring_inputs(manifest, parse_split(a.split), a.k, m.image_ids);
  return {std::move(m), std::move(in)};
}

ComponentWeights parse_weights(const std::string& text) {
  if (text.empty()) return default_combination_weights();
  ComponentWeights w;
  try {
    w = nlohmann::json::parse(text).get<ComponentWeights>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, std::string("weights: ") + e.what());
  }
  for (const auto& [name, _] : w) {
    if (!is_component_name(name)) fail(ErrorCode::Config, "unknown score component '" + name + "'");
  }
  return w;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"causeloc: causal localization of concept-selective voxels"};
  app.require_subcommand(1);
  int exit_code = 0;

  // plan
  auto* plan = app.add_subcommand("plan", "print the generation plan for a concept");
  std::string plan_concept, plan_overrides, plan_out;
  plan->add_option("--concept", plan_concept)->required();
  plan->add_option("--overrides", plan_overrides, "JSON file with plan overrides");
  plan->add_option("-o,--output", plan_out);
  plan->callback([&] {
    PlanConfig cfg;
    if (!plan_overrides.empty()) cfg = plan_config_from_json(read_json(plan_overrides));
    emit(plan_to_json(build_generation_plan(plan_concept, cfg)).dump(2) + "\n", plan_out);
  });

  // score
  auto* score = app.add_subcommand("score", "voxel scores from predicted responses");
  InputArgs score_in;
  std::string score_weights, score_out;
  bool score_standardize = false;
  add_inputs(score, score_in);
  score->add_option("--weights", score_weights, "JSON object of component weights");
  score->add_flag("--standardize", score_standardize, "z-score components before combining");
  score->add_option("-o,--output", score_out);
  score->callback([&] {
    auto [m, in] = load_inputs(score_in);
    auto table = score_voxels(m, in);
    table.components["MAG"] = table.s_pos;
    if (!table.s_neg.empty()) table.components["CSG"] = table.s_neg;
    if (!table.s_edit.empty()) table.components["CEG"] = table.s_edit;
    ComponentWeights weights;
    for (const auto& [name, w] : parse_weights(score_weights)) {
      if (table.components.count(name)) weights[name] = w;
      else std::cerr << "note: component " << name << " unavailable\n";
    }
    if (!weights.empty()) {
      ComponentScores comps;
      for (const auto& [name, _] : weights) comps[name] = table.components.at(name);
      table.components["combined"] = combined_ranking_score(comps, weights, score_standardize);
    }
    emit(score_table_to_csv(table), score_out);
  });

  // select-region
  auto* select = app.add_subcommand("select-region", "choose a region from a score table");
  std::string sel_scores, sel_mode = "top-k", sel_score = "s_causal", sel_concept, sel_out;
  std::size_t sel_k = kDefaultRegionSize;
  select->add_option("--scores", sel_scores)->required();
  select->add_option("--mode", sel_mode, "top-k or positive-causal");
  select->add_option("--score", sel_score, "ranking score for top-k");
  select->add_option("--k", sel_k);
  select->add_option("--concept", sel_concept);
  select->add_option("-o,--output", sel_out);
  select->callback([&] {
    auto table = read_score_table(sel_scores);
    Region r;
    if (sel_mode == "positive-causal") r = select_region_positive_causal(table, sel_concept);
    else if (sel_mode == "top-k") r = select_region_top_k(table, sel_score, sel_k, sel_concept);
    else fail(ErrorCode::InvalidArgument, "mode must be top-k or positive-causal");
    if (r.short_region) std::cerr << "note: fewer voxels than requested\n";
    emit(region_to_csv(r), sel_out);
  });

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "region-level scores on a split");
  InputArgs eval_in;
  eval_in.split = "eval";
  std::string eval_region, eval_out;
  add_inputs(evaluate, eval_in);
  evaluate->add_option("--region", eval_region)->required();
  evaluate->add_option("-o,--output", eval_out);
  evaluate->callback([&] {
    auto [m, in] = load_inputs(eval_in);
    auto r = read_region(eval_region);
    emit(region_scores_to_json(region_scores(m, in, r.voxel_ids)).dump(2) + "\n", eval_out);
  });

  // pvalue
  auto* pvalue = app.add_subcommand("pvalue", "empirical p-value against baseline scores");
  double pv_target = 0.0;
  std::string pv_baselines;
  pvalue->add_option("--target", pv_target)->required();
  pvalue->add_option("--baselines", pv_baselines, "comma-separated baseline scores");
  pvalue->callback([&] {
    std::cout << csv::format_double(empirical_p_value(pv_target, parse_doubles(pv_baselines)))
              << "\n";
  });

  // coverage
  auto* coverage = app.add_subcommand("coverage", "coverage of a retrieved measured manifest");
  std::string cov_manifest, cov_out;
  std::size_t cov_pos = 200, cov_neg = 10;
  CoverageThresholds cov_tau;
  coverage->add_option("--manifest", cov_manifest)->required();
  coverage->add_option("--n-pos", cov_pos, "requested positives");
  coverage->add_option("--n-neg-per-counter", cov_neg, "requested negatives per counter concept");
  coverage->add_option("--tau-pos", cov_tau.tau_pos);
  coverage->add_option("--tau-neg", cov_tau.tau_neg);
  coverage->add_option("-o,--output", cov_out);
  coverage->callback([&] {
    auto m = read_manifest(cov_manifest);
    RequestedCounts req;
    req.n_pos = cov_pos;
    for (const auto& c : m.counter_concepts) req.n_neg_per_counter[c] = cov_neg;
    auto report = coverage_report(m.concept_name, m, req, cov_tau);
    emit(coverage_to_json(report).dump(2) + "\n", cov_out);
  });

  // verdict
  auto* verdict = app.add_subcommand("verdict", "decision from evidence and coverage");
  std::optional<double> v_gen, v_meas;
  bool v_gate = false;
  std::string v_cov = "low";
  EvidenceThresholds v_thr;
  verdict->add_option("--gen-causal", v_gen, "generated-eval region causal score");
  verdict->add_option("--meas-causal", v_meas, "measured-eval region causal score");
  verdict->add_flag("--gate-passed", v_gate);
  verdict->add_option("--coverage", v_cov, "high or low");
  verdict->add_option("--min-gen-causal", v_thr.min_gen_causal);
  verdict->add_option("--min-meas-causal", v_thr.min_meas_causal);
  verdict->callback([&] {
    EvidenceInputs in;
    in.gen_eval_causal = v_gen;
    in.meas_eval_causal = v_meas;
    in.gate.passed = v_gate;
    in.coverage = parse_level(v_cov);
    auto evidence = assess_causal_evidence(in, v_thr);
    std::cout << "evidence: " << to_string(evidence) << "\n"
              << "coverage: " << to_string(in.coverage) << "\n"
              << "decision: " << to_string(decide(evidence, in.coverage)) << "\n";
  });

  // simulate
  auto* simulate = app.add_subcommand("simulate", "activation vs causal ranking on a synthetic world");
  std::string sim_world, sim_out;
  std::optional<std::uint64_t> sim_seed;
  bool sim_noiseless = false;
  sim::FprConfig sim_cfg;
  simulate->add_option("--world", sim_world)->required();
  simulate->add_option("--seed", sim_seed);
  simulate->add_flag("--noiseless", sim_noiseless, "set every noise level to zero");
  simulate->add_option("--region-size", sim_cfg.region_size);
  simulate->add_option("--workers", sim_cfg.workers);
  simulate->add_option("-o,--output-dir", sim_out);
  simulate->callback([&] {
    auto spec = sim::read_world_spec(sim_world);
    if (sim_noiseless) spec.noise_sd = 0.0;
    auto world = sim::build_world(spec, sim_seed.value_or(spec.default_seed));
    auto result = sim::run_fpr_experiment(*world, sim_cfg);
    if (sim_out.empty()) {
      std::cout << sim::fpr_metrics_csv(result);
    } else {
      fs::create_directories(sim_out);
      csv::write_file((fs::path(sim_out) / "metrics.csv").string(), sim::fpr_metrics_csv(result));
      csv::write_file((fs::path(sim_out) / "concepts.csv").string(), sim::fpr_concepts_csv(result));
    }
  });

  // compare-baselines
  auto* compare = app.add_subcommand("compare-baselines",
                                     "p-values of a region's scores against baseline concepts");
  InputArgs cmp_in;
  cmp_in.split = "eval";
  std::string cmp_region, cmp_out, cmp_concept;
  std::vector<std::string> cmp_baselines;
  double cmp_alpha = kDefaultAlpha;
  add_inputs(compare, cmp_in);
  compare->add_option("--region", cmp_region)->required();
  compare->add_option("--baseline", cmp_baselines, "MATRIX:MANIFEST for one baseline concept")
      ->required();
  compare->add_option("--alpha", cmp_alpha);
  compare->add_option("--concept", cmp_concept);
  compare->add_option("-o,--output", cmp_out);
  compare->callback([&] {
    auto region = read_region(cmp_region);
    auto [m, in] = load_inputs(cmp_in);
    auto target = region_scores(m, in, region.voxel_ids);
    std::map<Criterion, std::vector<double>> base;
    for (const auto& spec : cmp_baselines) {
      auto colon = spec.find(':');
      if (colon == std::string::npos) fail(ErrorCode::InvalidArgument, "baseline must be MATRIX:MANIFEST");
      InputArgs b = cmp_in;
      b.matrix = spec.substr(0, colon);
      b.manifest = spec.substr(colon + 1);
      auto [bm, bin] = load_inputs(b);
      auto s = region_scores(bm, bin, region.voxel_ids);
      base[Criterion::ActivationGen].push_back(s.s_pos);
      if (s.s_neg) base[Criterion::CausalGen].push_back(*s.s_neg);
      if (s.s_edit) base[Criterion::CausalEdits].push_back(*s.s_edit);
    }
    std::string text = significance_csv_header();
    auto row = [&](Criterion c, std::optional<double> t) {
      if (t) text += significance_csv_row(cmp_concept, significance_test(c, *t, base[c], cmp_alpha));
    };
    row(Criterion::ActivationGen, target.s_pos);
    row(Criterion::CausalGen, target.s_neg);
    row(Criterion::CausalEdits, target.s_edit);
    emit(text, cmp_out);
  });

  // export-map
  auto* exportmap = app.add_subcommand("export-map", "voxel_id,score table for one score");
  std::string ex_scores, ex_which = "s_causal", ex_out;
  exportmap->add_option("--scores", ex_scores)->required();
  exportmap->add_option("--which", ex_which);
  exportmap->add_option("-o,--output", ex_out);
  exportmap->callback([&] { emit(score_map_csv(read_score_table(ex_scores), ex_which), ex_out); });

  // run
  auto* run = app.add_subcommand("run", "full pipeline from a config file");
  std::string run_config;
  std::optional<std::uint64_t> run_seed;
  std::optional<std::size_t> run_workers;
  std::optional<double> run_alpha;
  std::string run_outdir, run_endpoint;
  run->add_option("--config", run_config)->required();
  run->add_option("--seed", run_seed);
  run->add_option("--workers", run_workers);
  run->add_option("--alpha", run_alpha);
  run->add_option("--output-dir", run_outdir);
  run->add_option("--endpoint", run_endpoint, "model service base url");
  run->callback([&] {
    PipelineConfig cfg;
    try {
      auto j = read_json(run_config);
      if (run_seed) j["seed"] = *run_seed;
      if (run_workers) j["workers"] = *run_workers;
      if (run_alpha) j["alpha"] = *run_alpha;
      if (!run_endpoint.empty()) j["backend"]["endpoint"] = run_endpoint;
      auto base = fs::path(run_config).parent_path().string();
      cfg = config_from_json(j, base.empty() ? "." : base);
      if (!run_outdir.empty()) cfg.output_dir = run_outdir;
    } catch (const Error& e) {
      std::cerr << "fatal: " << e.what() << "\n";
      exit_code = 1;
      return;
    }
    auto result = run_pipeline(cfg);
    if (!result.fatal_error.empty()) std::cerr << "fatal: " << result.fatal_error << "\n";
    for (const auto& r : result.reports) {
      if (r.ok) {
        std::cout << r.concept_name << ": " << to_string(r.verdict.decision) << "\n";
      } else {
        std::cout << r.concept_name << ": error: " << r.error << "\n";
      }
      if (!r.degraded.empty()) {
        std::cout << "  " << r.degraded.size() << " degraded items\n";
      }
    }
    exit_code = result.exit_code;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
