#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace causeloc {

enum class Criterion { ActivationGen, ActivationMeas, CausalGen, CausalMeas, CausalEdits };

const char* to_string(Criterion c);
Criterion parse_criterion(const std::string& s);
const std::vector<Criterion>& all_criteria();

// One-sided empirical p-value with plus-one smoothing:
// (1 + #{baseline >= target}) / (1 + N). Ties count against the target.
double empirical_p_value(double target, const std::vector<double>& baselines);

inline constexpr double kDefaultAlpha = 0.05;

struct SignificanceResult {
  Criterion criterion = Criterion::ActivationGen;
  double target_score = 0.0;
  std::vector<double> baseline_scores;
  double p_value = 1.0;
  bool passed = false;
};

SignificanceResult significance_test(Criterion c, double target,
                                     std::vector<double> baselines,
                                     double alpha = kDefaultAlpha);

struct GateDecision {
  bool passed = false;
  double alpha = kDefaultAlpha;
  std::vector<Criterion> failing;
  std::vector<Criterion> required;
};

// Passes iff every required criterion has p <= alpha. Throws if a required
// criterion is missing or any criterion appears twice.
GateDecision significance_gate(const std::vector<SignificanceResult>& results,
                               double alpha = kDefaultAlpha,
                               const std::set<Criterion>& required = {Criterion::ActivationGen,
                                                                      Criterion::CausalGen});

// concept,criterion,target,n_baselines,p,passed
std::string significance_csv_header();
std::string significance_csv_row(const std::string& concept_name, const SignificanceResult& r);

}  // namespace causeloc
