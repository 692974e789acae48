// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "causeloc/csv.hpp"
#include "causeloc/error.hpp"
#include "causeloc/matrix_store.hpp"
#include "causeloc/pipeline.hpp"
#include "causeloc/retrieval.hpp"
#include "causeloc/rng.hpp"
#include "causeloc/scoring.hpp"
#include "causeloc/simulator.hpp"
#include "causeloc/stats.hpp"
#include "causeloc/stimulus.hpp"
#include "causeloc/verdict.hpp"
#include "generators.hpp"
#include "oracles.hpp"
#include "tree_diff.hpp"

namespace fs = std::filesystem;
using namespace causeloc;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  void expect(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool close(double a, double b, double tol = 1e-9) { return std::abs(a - b) <= tol; }

Outcome scoring_oracles() {
  Outcome o;
  auto t0 = Clock::now();
  Rng rng(2024);
  std::size_t big_k = 0, small_k = 0;
  for (int t = 0; t < 200; ++t) {
    auto inst = gen::instance(rng);
    const auto& m = inst.m;
    auto& in = inst.in;
    if (t % 4 == 0) in.k = 10;
    if (t % 4 == 1) in.k = in.negatives.size() + 1 + rng.below(5);
    if (in.k > in.negatives.size()) ++big_k;
    if (in.k < in.negatives.size()) ++small_k;
    auto table = score_voxels(m, in);
    ComponentScores comps;
    std::vector<double> want_pos, want_neg, want_edit;
    for (std::size_t v = 0; v < m.n_voxels(); ++v) {
      auto a = oracle::voxel(m, v);
      double sp = oracle::s_pos(a, in.positives);
      o.expect(close(table.s_pos[v], sp), "s_pos");
      std::optional<double> sn, se;
      if (!in.negatives.empty()) {
        sn = oracle::s_neg(a, in.positives, in.negatives, in.k);
        o.expect(close(table.s_neg.at(v), *sn), "s_neg");
      } else {
        o.expect(table.s_neg.empty(), "s_neg without negatives");
      }
      se = oracle::s_edit(a, in.edits);
      if (se) o.expect(close(table.s_edit.at(v), *se), "s_edit");
      else o.expect(table.s_edit.empty(), "s_edit without pairs");
      if (sn || se) {
        double sc = sn && se ? (*sn + *se) / 2.0 : (sn ? *sn : *se);
        o.expect(close(table.s_causal.at(v), sc), "s_causal");
      }
      want_pos.push_back(sp);
      want_neg.push_back(sn.value_or(0.0));
      want_edit.push_back(se.value_or(0.0));
    }
    // Weighted combination of implementation columns against the oracle columns.
    double w1 = rng.normal(), w2 = rng.normal(), w3 = rng.normal();
    comps["MAG"] = table.s_pos;
    comps["CSG"] = table.s_neg.empty() ? ScoreVector(m.n_voxels(), 0.0) : table.s_neg;
    comps["CEG"] = table.s_edit.empty() ? ScoreVector(m.n_voxels(), 0.0) : table.s_edit;
    auto combined = combined_ranking_score(comps, {{"MAG", w1}, {"CSG", w2}, {"CEG", w3}});
    for (std::size_t v = 0; v < m.n_voxels(); ++v) {
      o.expect(close(combined[v], w1 * want_pos[v] + w2 * want_neg[v] + w3 * want_edit[v]), "combined");
    }
    // Random region.
    std::vector<std::string> region;
    for (const auto& id : m.voxel_ids) {
      if (rng.bernoulli(0.5)) region.push_back(id);
    }
    if (region.empty()) region.push_back(m.voxel_ids[0]);
    auto rs = region_scores(m, in, region);
    auto a = oracle::region(m, region);
    o.expect(close(rs.s_pos, oracle::s_pos(a, in.positives)), "region s_pos");
    if (!in.negatives.empty()) {
      o.expect(rs.s_neg && close(*rs.s_neg, oracle::s_neg(a, in.positives, in.negatives, in.k)),
               "region s_neg");
    }
    if (auto e = oracle::s_edit(a, in.edits)) o.expect(rs.s_edit && close(*rs.s_edit, *e), "region s_edit");
  }
  double secs = seconds_since(t0);
  o.expect(big_k > 0 && small_k > 0, "fixture lacks k>|N| or k<|N| cases");
  o.expect(secs < 10.0, "too slow");
  char buf[128];
  std::snprintf(buf, sizeof(buf), "200 instances (%zu with k>|N|, %zu with k<|N|), %.3f s", big_k, small_k, secs);
  if (o.pass) o.detail = buf;
  return o;
}

Outcome pvalue_exactness() {
  Outcome o;
  Rng rng(99);
  std::size_t ties = 0, empties = 0;
  for (int t = 0; t < 1000; ++t) {
    std::size_t n = t % 50 == 0 ? 0 : rng.below(30);
    std::vector<double> b;
    for (std::size_t i = 0; i < n; ++i) b.push_back(static_cast<double>(rng.below(7)) * 0.5);
    double target = static_cast<double>(rng.below(7)) * 0.5;
    for (double x : b) ties += x == target;
    empties += n == 0;
    o.expect(empirical_p_value(target, b) == oracle::p_value(target, b), "count mismatch");
    std::vector<double> below;
    for (std::size_t i = 0; i < n; ++i) below.push_back(target - 1.0 - static_cast<double>(i));
    o.expect(empirical_p_value(target, below) == 1.0 / (1.0 + static_cast<double>(n)), "1/(1+N)");
  }
  o.expect(ties > 0 && empties > 0, "fixture lacks ties or empty baselines");
  if (o.pass) o.detail = "1000 cases, " + std::to_string(ties) + " ties, " + std::to_string(empties) + " empty";
  return o;
}

Outcome normalization_reliability() {
  Outcome o;
  Rng rng(5);
  auto m = gen::matrix(rng, 60, 25);
  for (std::size_t i = 0; i < m.n_images(); ++i) {
    for (std::size_t v = 0; v < m.n_voxels(); ++v) m.at(i, v) = m.at(i, v) * static_cast<float>(v + 1) + static_cast<float>(v) * 3.0f;
  }
  auto z = zscore_normalize(m);
  for (std::size_t v = 0; v < z.matrix.n_voxels(); ++v) {
    auto col = z.matrix.column(v);
    double mu = oracle::mean(col), ss = 0.0;
    for (double x : col) ss += (x - mu) * (x - mu);
    double sd = std::sqrt(ss / static_cast<double>(col.size()));
    o.expect(std::abs(mu) < 1e-6, "mean");
    o.expect(std::abs(sd - 1.0) < 1e-5, "std");
  }
  auto twice = zscore_normalize(z.matrix);
  for (std::size_t i = 0; i < twice.matrix.values.size(); ++i) {
    o.expect(std::abs(twice.matrix.values[i] - z.matrix.values[i]) < 1e-5, "idempotence");
  }

  // Columns built by Gram-Schmidt so the correlation is exactly r.
  const std::vector<double> targets{0.5, 0.19, 0.21, -0.6, 0.2001};
  const std::vector<bool> expected{true, false, true, false, true};
  std::size_t n = 200;
  std::vector<std::string> images, voxels;
  for (std::size_t i = 0; i < n; ++i) images.push_back(gen::id("img", i));
  for (std::size_t v = 0; v < targets.size(); ++v) voxels.push_back(gen::id("v", v));
  ResponseMatrix pred(images, voxels), meas(images, voxels, Provenance::Measured);
  auto centered_unit = [&](std::vector<double> x) {
    double mu = oracle::mean(x), ss = 0.0;
    for (auto& e : x) e -= mu;
    for (double e : x) ss += e * e;
    for (auto& e : x) e /= std::sqrt(ss);
    return x;
  };
  for (std::size_t v = 0; v < targets.size(); ++v) {
    std::vector<double> x(n), e(n);
    for (auto& a : x) a = rng.normal();
    for (auto& a : e) a = rng.normal();
    x = centered_unit(x);
    e = centered_unit(e);
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += x[i] * e[i];
    for (std::size_t i = 0; i < n; ++i) e[i] -= dot * x[i];
    e = centered_unit(e);
    double r = targets[v];
    for (std::size_t i = 0; i < n; ++i) {
      pred.at(i, v) = static_cast<float>(x[i] * 10.0);
      meas.at(i, v) = static_cast<float>((r * x[i] + std::sqrt(1 - r * r) * e[i]) * 10.0);
    }
  }
  auto mask = filter_voxels_by_reliability(pred, meas, 0.2);
  for (std::size_t v = 0; v < targets.size(); ++v) {
    o.expect(mask.keep[v] == expected[v], "mask at " + voxels[v]);
    o.expect(std::abs(mask.correlation[v] - targets[v]) < 1e-4, "correlation at " + voxels[v]);
  }
  if (o.pass) o.detail = "moments, idempotence and 5-column constructed mask";
  return o;
}

Outcome retrieval_equivalence() {
  Outcome o;
  Rng rng(1000);
  for (int trial = 0; trial < 10; ++trial) {
    auto idx = gen::index(rng, 1000, 8);
    auto neg = gen::unit_vector(rng, 8), pos = gen::unit_vector(rng, 8);
    std::size_t n = 1 + rng.below(100);
    auto got = two_stage_negative_retrieval(neg, pos, idx, 100, n);
    o.expect(got.ranked_ids == oracle::two_stage(idx, neg, pos, 100, n), "m=100");
    auto single = rank_by_similarity(neg, idx, 100);
    o.expect(single.ranked_ids == oracle::top_n(idx, neg, 100), "stage one");
    auto all = two_stage_negative_retrieval(neg, pos, idx, idx.size(), idx.size());
    o.expect(all.ranked_ids == oracle::two_stage(idx, pos, pos, idx.size(), idx.size()), "m=|index|");
  }
  if (o.pass) o.detail = "10 indexes of 1000 unit embeddings with duplicate rows";
  return o;
}

Outcome verdict_table() {
  Outcome o;
  struct Row { CausalEvidence e; CoverageLevel c; Decision d; };
  const Row table[] = {
      {CausalEvidence::Strong, CoverageLevel::High, Decision::HighConfidenceDiscovery},
      {CausalEvidence::Weak, CoverageLevel::High, Decision::Rejected},
      {CausalEvidence::Strong, CoverageLevel::Low, Decision::PromisingNeedsFollowUp},
      {CausalEvidence::Weak, CoverageLevel::Low, Decision::Inconclusive},
  };
  for (const auto& r : table) o.expect(decide(r.e, r.c) == r.d, to_string(r.d));
  // Evidence assessment over every input combination.
  std::size_t cases = 0;
  for (double gen_c : {-1.0, 0.0, 1.0}) {
    for (std::optional<double> meas_c : {std::optional<double>{}, std::optional<double>{-1.0}, std::optional<double>{1.0}}) {
      for (bool gate : {false, true}) {
        for (auto cov : {CoverageLevel::High, CoverageLevel::Low}) {
          EvidenceInputs in;
          in.gen_eval_causal = gen_c;
          in.meas_eval_causal = meas_c;
          in.gate.passed = gate;
          in.coverage = cov;
          bool meas_ok = (meas_c && *meas_c > 0.0) || cov == CoverageLevel::Low;
          bool strong = gen_c > 0.0 && gate && meas_ok;
          o.expect(assess_causal_evidence(in) == (strong ? CausalEvidence::Strong : CausalEvidence::Weak),
                   "evidence case");
          ++cases;
        }
      }
    }
  }
  if (o.pass) o.detail = "4 quadrants, " + std::to_string(cases) + " evidence cases";
  return o;
}

Outcome synthetic_direction() {
  Outcome o;
  auto t0 = Clock::now();
  auto spec = sim::read_world_spec(std::string(CAUSELOC_DATA_DIR) + "/reference_world.json");
  auto world = sim::build_world(spec, 42);
  auto r = sim::run_fpr_experiment(*world, {0, 10, 1});
  o.expect(r.n_concepts >= 20, "fewer than 20 concepts");
  o.expect(r.fpr_activation >= 0.5, "activation FPR below 0.5");
  o.expect(r.fpr_causal < r.fpr_activation, "causal FPR not lower");
  o.expect(r.tpr_causal >= r.tpr_activation, "causal TPR lower");
  auto quiet = spec;
  quiet.noise_sd = 0.0;
  auto nl = sim::run_fpr_experiment(*sim::build_world(quiet, 42), {0, 10, 1});
  o.expect(nl.fpr_causal == 0.0, "noiseless causal FPR");
  o.expect(nl.n_pure > 0 && nl.fpr_activation_pure == 1.0, "noiseless activation FPR on pure confounds");
  double secs = seconds_since(t0);
  o.expect(secs < 60.0, "too slow");
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "FPR %.3f -> %.3f, TPR %.3f -> %.3f; noiseless causal FPR %.3f, pure activation FPR %.3f; %.1f s",
                r.fpr_activation, r.fpr_causal, r.tpr_activation, r.tpr_causal, nl.fpr_causal,
                nl.fpr_activation_pure, secs);
  if (o.pass) o.detail = buf;
  else o.detail += std::string(" (") + buf + ")";
  return o;
}

Outcome determinism() {
  Outcome o;
  auto cfg = read_config(std::string(CAUSELOC_DATA_DIR) + "/pipeline_config.json");
  auto base = fs::temp_directory_path() / "causeloc_acceptance";
  fs::remove_all(base);
  auto run = [&](const std::string& name, std::size_t workers) {
    cfg.output_dir = (base / name).string();
    cfg.workers = workers;
    return run_pipeline(cfg).exit_code;
  };
  o.expect(run("a", 1) == 0, "first run");
  o.expect(run("b", 1) == 0, "second run");
  o.expect(run("c", 4) == 0, "four workers");
  auto d1 = tree_diff(base / "a", base / "b");
  auto d2 = tree_diff(base / "a", base / "c");
  o.expect(d1.empty(), "runs differ: " + (d1.empty() ? "" : d1.front()));
  o.expect(d2.empty(), "worker counts differ: " + (d2.empty() ? "" : d2.front()));
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(base / "a")) files += e.is_regular_file();
  fs::remove_all(base);
  if (o.pass) o.detail = std::to_string(files) + " files identical across runs and workers {1,4}";
  return o;
}

Outcome format_round_trips() {
  Outcome o;
  Rng rng(8);
  auto dir = fs::temp_directory_path();
  for (int t = 0; t < 100; ++t) {
    auto m = gen::matrix(rng, rng.below(20), rng.below(15));
    m.provenance = rng.bernoulli(0.5) ? Provenance::Measured : Provenance::Predicted;
    for (auto& x : m.values) {
      std::uint32_t bits = static_cast<std::uint32_t>(rng.below(1u << 31)) << 1 | static_cast<std::uint32_t>(rng.below(2));
      float f;
      std::memcpy(&f, &bits, sizeof f);
      if (std::isfinite(f)) x = f;
    }
    auto path = (dir / "causeloc_acc.bcrm").string();
    write_matrix(m, path);
    auto back = read_matrix(path);
    o.expect(back.image_ids == m.image_ids && back.voxel_ids == m.voxel_ids &&
                 back.provenance == m.provenance && back.values.size() == m.values.size() &&
                 std::memcmp(back.values.data(), m.values.data(), m.values.size() * sizeof(float)) == 0,
             "matrix");
    auto idx = gen::index(rng, 1 + rng.below(30), 1 + rng.below(9));
    auto ipath = (dir / "causeloc_acc.bcei").string();
    write_index(idx, ipath);
    auto iback = read_index(ipath);
    o.expect(iback.ids == idx.ids && iback.dim == idx.dim &&
                 std::memcmp(iback.vectors.data(), idx.vectors.data(), idx.vectors.size() * sizeof(float)) == 0,
             "index");
    fs::remove(path);
    fs::remove(ipath);
  }
  StimulusManifest m;
  m.concept_name = "dog";
  m.counter_concepts = {"cat"};
  m.extra = {{"producer", "lab"}, {"nested", {{"a", 1}}}};
  StimulusImage p{"p1", Role::Positive, Split::Train, Source::Generated, "dog", {}, {}, true, {}, "a dog", {{"seed", 7}}};
  StimulusImage n{"n1", Role::SemanticNegative, Split::Eval, Source::RetrievedMeasured, "dog", "cat", {}, {}, true, {}, nlohmann::json::object()};
  StimulusImage e{"e1", Role::CounterfactualEdit, Split::Train, Source::Generated, "dog", {}, "p1", false, true, "remove the dog", {{"x", {1, 2}}}};
  m.images = {p, n, e};
  auto back = manifest_from_jsonl(manifest_to_jsonl(m));
  o.expect(back == m, "manifest");
  auto mpath = (dir / "causeloc_acc.jsonl").string();
  write_manifest(m, mpath);
  o.expect(read_manifest(mpath) == m, "manifest file");
  fs::remove(mpath);
  if (o.pass) o.detail = "100 matrices and indexes bit-exact; manifest with unknown fields";
  return o;
}

Outcome plan_defaults() {
  Outcome o;
  auto p = build_generation_plan("dog");
  o.expect(p.n_pos_train == 200 && p.n_pos_eval == 100, "positives");
  o.expect(p.n_counter_concepts == 10 && p.n_prompts_per_counter == 10, "negatives");
  o.expect(p.n_edit_parents_train == 50 && p.n_edit_parents_eval == 20 && p.n_edits_per_parent == 10, "edits");
  if (o.pass) o.detail = "200/100, 10x10, 50/20 x 10";
  return o;
}

Outcome coverage_arithmetic() {
  Outcome o;
  struct Case {
    std::size_t n_pos, pos_verified;
    std::vector<std::pair<std::size_t, std::size_t>> counters;  // requested, verified
    double pos_ratio, neg_ratio;
    CoverageLevel level;
  };
  using L = CoverageLevel;
  const std::vector<Case> cases = {
      {200, 200, {{10, 10}, {10, 10}}, 1.0, 1.0, L::High},
      {200, 100, {{10, 1}, {10, 0}}, 0.5, 0.5, L::High},
      {200, 99, {{10, 5}, {10, 5}}, 0.495, 1.0, L::Low},
      {100, 250, {{10, 3}, {10, 0}, {10, 0}}, 1.0, 1.0 / 3.0, L::Low},
      {0, 0, {{10, 10}}, 0.0, 1.0, L::Low},
      {50, 40, {}, 0.8, 0.0, L::Low},
      {50, 40, {{0, 0}, {10, 2}}, 0.8, 0.5, L::High},
      {0, 5, {}, 0.0, 0.0, L::Low},
      {10, 0, {{10, 10}, {10, 10}, {10, 10}, {10, 10}}, 0.0, 1.0, L::Low},
      {4, 2, {{5, 0}, {5, 0}, {5, 1}, {5, 1}}, 0.5, 0.5, L::High},
  };
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto& k = cases[c];
    StimulusManifest m;
    m.concept_name = "dog";
    RequestedCounts req;
    req.n_pos = k.n_pos;
    for (std::size_t i = 0; i < k.pos_verified; ++i) {
      StimulusImage img;
      img.id = gen::id("p", i);
      img.concept_name = "dog";
      img.verified_present = true;
      m.images.push_back(img);
    }
    StimulusImage unverified;
    unverified.id = "unverified";
    unverified.concept_name = "dog";
    unverified.verified_present = false;
    m.images.push_back(unverified);
    for (std::size_t j = 0; j < k.counters.size(); ++j) {
      auto counter = gen::id("c", j);
      req.n_neg_per_counter[counter] = k.counters[j].first;
      m.counter_concepts.push_back(counter);
      for (std::size_t i = 0; i < k.counters[j].second; ++i) {
        StimulusImage img;
        img.id = counter + gen::id("_n", i);
        img.role = Role::SemanticNegative;
        img.concept_name = "dog";
        img.counter_concept = counter;
        img.verified_absent = true;
        m.images.push_back(img);
      }
    }
    auto r = coverage_report("dog", m, req);
    auto tag = "case " + std::to_string(c);
    o.expect(close(r.pos_coverage_ratio, k.pos_ratio, 1e-12), tag + " pos ratio");
    o.expect(close(r.neg_pair_coverage_ratio, k.neg_ratio, 1e-12), tag + " neg ratio");
    o.expect(r.level == k.level, tag + " level");
    o.expect(r.pos_zero_requested == (k.n_pos == 0), tag + " pos zero flag");
    o.expect(r.neg_zero_requested == k.counters.empty(), tag + " neg zero flag");
  }
  if (o.pass) o.detail = "10 cases";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"scoring oracle equivalence", scoring_oracles},
      {"p-value exactness", pvalue_exactness},
      {"normalization and reliability", normalization_reliability},
      {"two-stage retrieval equivalence", retrieval_equivalence},
      {"verdict table totality", verdict_table},
      {"synthetic ground truth direction", synthetic_direction},
      {"determinism", determinism},
      {"format round trips", format_round_trips},
      {"generation-plan defaults", plan_defaults},
      {"coverage arithmetic", coverage_arithmetic},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
