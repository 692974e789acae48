#include "causeloc/verdict.hpp"

#include <algorithm>
#include <sstream>

#include "causeloc/csv.hpp"
#include "causeloc/error.hpp"

namespace causeloc {

const char* to_string(Decision d) {
  switch (d) {
    case Decision::HighConfidenceDiscovery: return "HighConfidenceDiscovery";
    case Decision::Rejected: return "Rejected";
    case Decision::PromisingNeedsFollowUp: return "PromisingNeedsFollowUp";
    case Decision::Inconclusive: return "Inconclusive";
  }
  return "?";
}

const char* to_string(CausalEvidence e) { return e == CausalEvidence::Strong ? "Strong" : "Weak"; }

CausalEvidence assess_causal_evidence(const EvidenceInputs& in,
                                      const EvidenceThresholds& thresholds) {
  if (!in.gen_eval_causal) {
    fail(ErrorCode::InvalidArgument, "generated-eval causal score missing");
  }
  if (!(*in.gen_eval_causal > thresholds.min_gen_causal)) return CausalEvidence::Weak;
  if (!in.gate.passed) return CausalEvidence::Weak;
  if (in.coverage == CoverageLevel::Low) return CausalEvidence::Strong;
  bool measured_ok = in.meas_eval_causal && *in.meas_eval_causal > thresholds.min_meas_causal;
  return measured_ok ? CausalEvidence::Strong : CausalEvidence::Weak;
}

Decision decide(CausalEvidence evidence, CoverageLevel coverage) {
  if (coverage == CoverageLevel::High) {
    return evidence == CausalEvidence::Strong ? Decision::HighConfidenceDiscovery
                                              : Decision::Rejected;
  }
  return evidence == CausalEvidence::Strong ? Decision::PromisingNeedsFollowUp
                                            : Decision::Inconclusive;
}

FollowUpPlan propose_followup(const CoverageReport& coverage, const GenerationPlan& plan,
                              const FollowUpConfig& config) {
  require(coverage.concept_name == plan.concept_name,
          "coverage and plan refer to different concepts");
  FollowUpPlan f;
  f.concept_name = coverage.concept_name;
  if (coverage.n_pos_verified < coverage.n_pos_requested) {
    f.missing_positive_count = coverage.n_pos_requested - coverage.n_pos_verified;
  }
  for (const auto& n : coverage.negatives) {
    if (n.verified < n.requested) {
      f.missing_negative_pairs.emplace_back(n.counter_concept, n.requested - n.verified);
    }
  }
  std::stable_sort(f.missing_negative_pairs.begin(), f.missing_negative_pairs.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  if (f.missing_positive_count > 0) {
    std::ostringstream why;
    why << coverage.n_pos_verified << " of " << coverage.n_pos_requested
        << " requested positives verified in measured data (plan targets "
        << plan.n_pos_train << " train / " << plan.n_pos_eval << " eval)";
    f.proposed_stimuli.push_back({Role::Positive, coverage.concept_name, f.missing_positive_count,
                                  why.str()});
  }
  for (const auto& [counter, deficit] : f.missing_negative_pairs) {
    std::ostringstream why;
    why << "counter concept '" << counter << "' lacks " << deficit
        << " verified negatives without '" << coverage.concept_name << "'";
    f.proposed_stimuli.push_back({Role::SemanticNegative, counter, deficit, why.str()});
  }
  if (config.max_proposals > 0 && f.proposed_stimuli.size() > config.max_proposals) {
    f.proposed_stimuli.resize(config.max_proposals);
  }
  return f;
}

nlohmann::json followup_to_json(const FollowUpPlan& f) {
  nlohmann::json missing = nlohmann::json::array();
  for (const auto& [c, n] : f.missing_negative_pairs) missing.push_back({{"counter_concept", c}, {"deficit", n}});
  nlohmann::json props = nlohmann::json::array();
  for (const auto& p : f.proposed_stimuli) {
    props.push_back({{"role", to_string(p.role)},
                     {"concept", p.concept_name},
                     {"count", p.count},
                     {"rationale", p.rationale}});
  }
  return {{"concept", f.concept_name},
          {"missing_positive_count", f.missing_positive_count},
          {"missing_negative_pairs", missing},
          {"proposed_stimuli", props}};
}

std::string followup_to_csv(const FollowUpPlan& f) {
  std::string out = "role,concept,count,rationale\n";
  for (const auto& p : f.proposed_stimuli) {
    out += csv::join_row({to_string(p.role), p.concept_name, std::to_string(p.count), p.rationale}) + "\n";
  }
  return out;
}

nlohmann::json region_scores_to_json(const RegionScoreSet& s) {
  nlohmann::json j = {{"s_pos", s.s_pos}, {"partial_causal", s.partial_causal}};
  j["s_neg"] = s.s_neg ? nlohmann::json(*s.s_neg) : nlohmann::json();
  j["s_edit"] = s.s_edit ? nlohmann::json(*s.s_edit) : nlohmann::json();
  j["s_causal"] = s.s_causal ? nlohmann::json(*s.s_causal) : nlohmann::json();
  j["counts"] = {{"n_positives", s.counts.n_positives},
                 {"n_negatives", s.counts.n_negatives},
                 {"n_negatives_used", s.counts.n_negatives_used},
                 {"n_edit_pairs_used", s.counts.n_edit_pairs_used},
                 {"n_positives_without_edits", s.counts.n_positives_without_edits}};
  return j;
}

namespace {

std::string opt(const std::optional<double>& v) {
  return v ? csv::format_double(*v) : std::string();
}

void write_scores(std::ostringstream& out, const char* label,
                  const std::optional<RegionScoreSet>& s) {
  out << label << ": ";
  if (!s) {
    out << "n/a\n";
    return;
  }
  out << "S_pos=" << csv::format_double(s->s_pos) << " S_neg=" << (s->s_neg ? opt(s->s_neg) : "n/a")
      << " S_edit=" << (s->s_edit ? opt(s->s_edit) : "n/a")
      << " S_causal=" << (s->s_causal ? opt(s->s_causal) : "n/a");
  if (s->partial_causal) out << " (partial causal evidence)";
  out << "\n";
}

}  // namespace

std::string render_verdict_text(const Verdict& v, const nlohmann::json& config_block) {
  std::ostringstream out;
  out << "concept: " << v.concept_name << "\n";
  out << "decision: " << to_string(v.decision) << "\n";
  out << "causal_evidence: " << to_string(v.causal_evidence) << "\n";
  out << "coverage_level: " << to_string(v.coverage_level) << "\n";
  out << "region_size: " << v.region_size << "\n";
  write_scores(out, "train", v.train_scores);
  write_scores(out, "generated_eval", v.gen_eval_scores);
  write_scores(out, "measured_eval", v.meas_eval_scores);
  for (const auto& s : v.significance) {
    out << "p[" << to_string(s.criterion) << "] = " << csv::format_double(s.p_value) << " over "
        << s.baseline_scores.size() << " baselines" << (s.passed ? " (pass)" : " (fail)") << "\n";
  }
  if (v.gate) {
    out << "gate: " << (v.gate->passed ? "pass" : "fail") << " at alpha "
        << csv::format_double(v.gate->alpha);
    if (!v.gate->failing.empty()) {
      out << "; failing:";
      for (auto c : v.gate->failing) out << " " << to_string(c);
    }
    out << "\n";
  }
  if (v.coverage) {
    out << "coverage: positives " << v.coverage->n_pos_verified << "/" << v.coverage->n_pos_requested
        << ", counter concepts populated " << csv::format_double(v.coverage->neg_pair_coverage_ratio)
        << "\n";
  }
  if (v.followup) {
    for (const auto& p : v.followup->proposed_stimuli) {
      out << "follow-up: " << to_string(p.role) << " '" << p.concept_name << "' x" << p.count << " - "
          << p.rationale << "\n";
    }
  }
  for (const auto& n : v.notes) out << "note: " << n << "\n";
  out << "config: " << config_block.dump() << "\n";
  return out.str();
}

std::string verdict_csv_header() {
  std::string h = "concept,decision,evidence,coverage,region_size,gen_pos,gen_causal,meas_causal";
  for (auto c : all_criteria()) h += std::string(",p_") + to_string(c);
  return h + "\n";
}

std::string verdict_csv_row(const Verdict& v) {
  std::vector<std::string> row = {v.concept_name, to_string(v.decision),
                                  to_string(v.causal_evidence), to_string(v.coverage_level),
                                  std::to_string(v.region_size)};
  row.push_back(v.gen_eval_scores ? csv::format_double(v.gen_eval_scores->s_pos) : "");
  row.push_back(v.gen_eval_scores ? opt(v.gen_eval_scores->s_causal) : "");
  row.push_back(v.meas_eval_scores ? opt(v.meas_eval_scores->s_causal) : "");
  for (auto c : all_criteria()) {
    auto it = std::find_if(v.significance.begin(), v.significance.end(),
                           [&](const SignificanceResult& s) { return s.criterion == c; });
    row.push_back(it == v.significance.end() ? "" : csv::format_double(it->p_value));
  }
  return csv::join_row(row) + "\n";
}

}  // namespace causeloc
