#include "causeloc/stats.hpp"

#include <map>

#include "causeloc/csv.hpp"
#include "causeloc/error.hpp"

namespace causeloc {

const char* to_string(Criterion c) {
  switch (c) {
    case Criterion::ActivationGen: return "ActivationGen";
    case Criterion::ActivationMeas: return "ActivationMeas";
    case Criterion::CausalGen: return "CausalGen";
    case Criterion::CausalMeas: return "CausalMeas";
    case Criterion::CausalEdits: return "CausalEdits";
  }
  return "?";
}

const std::vector<Criterion>& all_criteria() {
  static const std::vector<Criterion> kAll = {Criterion::ActivationGen, Criterion::ActivationMeas,
                                              Criterion::CausalGen, Criterion::CausalMeas,
                                              Criterion::CausalEdits};
  return kAll;
}

Criterion parse_criterion(const std::string& s) {
  for (auto c : all_criteria()) {
    if (s == to_string(c)) return c;
  }
  fail(ErrorCode::Parse, "unknown criterion '" + s + "'");
}

double empirical_p_value(double target, const std::vector<double>& baselines) {
  std::size_t at_least = 0;
  for (double b : baselines) {
    if (b >= target) ++at_least;
  }
  return static_cast<double>(1 + at_least) / static_cast<double>(1 + baselines.size());
}

SignificanceResult significance_test(Criterion c, double target, std::vector<double> baselines,
                                     double alpha) {
  SignificanceResult r;
  r.criterion = c;
  r.target_score = target;
  r.p_value = empirical_p_value(target, baselines);
  r.baseline_scores = std::move(baselines);
  r.passed = r.p_value <= alpha;
  return r;
}

GateDecision significance_gate(const std::vector<SignificanceResult>& results, double alpha,
                               const std::set<Criterion>& required) {
  std::map<Criterion, const SignificanceResult*> by_criterion;
  for (const auto& r : results) {
    if (!by_criterion.emplace(r.criterion, &r).second) {
      fail(ErrorCode::InvalidArgument,
           std::string("criterion ") + to_string(r.criterion) + " given twice");
    }
  }
  GateDecision d;
  d.alpha = alpha;
  d.required.assign(required.begin(), required.end());
  for (auto c : required) {
    auto it = by_criterion.find(c);
    if (it == by_criterion.end()) {
      fail(ErrorCode::InvalidArgument, std::string("criterion unavailable: ") + to_string(c));
    }
    if (!(it->second->p_value <= alpha)) d.failing.push_back(c);
  }
  d.passed = d.failing.empty();
  return d;
}

std::string significance_csv_header() { return "concept,criterion,target,n_baselines,p,passed\n"; }

std::string significance_csv_row(const std::string& concept_name, const SignificanceResult& r) {
  return csv::join_row({concept_name, to_string(r.criterion), csv::format_double(r.target_score),
                        std::to_string(r.baseline_scores.size()), csv::format_double(r.p_value),
                        r.passed ? "true" : "false"}) +
         "\n";
}

}  // namespace causeloc
