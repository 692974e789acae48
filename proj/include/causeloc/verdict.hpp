#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "causeloc/retrieval.hpp"
#include "causeloc/scoring.hpp"
#include "causeloc/stats.hpp"
#include "causeloc/stimulus.hpp"

namespace causeloc {

enum class Decision { HighConfidenceDiscovery, Rejected, PromisingNeedsFollowUp, Inconclusive };
enum class CausalEvidence { Strong, Weak };

const char* to_string(Decision d);
const char* to_string(CausalEvidence e);

struct EvidenceInputs {
  std::optional<double> gen_eval_causal;   // region causal score, generated eval split
  std::optional<double> meas_eval_causal;  // region causal score, measured eval data
  GateDecision gate;
  CoverageLevel coverage = CoverageLevel::Low;
};

struct EvidenceThresholds {
  double min_gen_causal = 0.0;   // strictly greater than
  double min_meas_causal = 0.0;  // strictly greater than
};

// Strong iff generated-eval causal score clears its threshold, the gate
// passes, and either the measured-eval causal score clears its threshold or
// coverage is Low (measured evaluation is then uninformative).
CausalEvidence assess_causal_evidence(const EvidenceInputs& in,
                                      const EvidenceThresholds& thresholds = {});

Decision decide(CausalEvidence evidence, CoverageLevel coverage);

struct ProposedStimulus {
  Role role = Role::Positive;
  std::string concept_name;  // target concept, or the counter concept
  std::size_t count = 0;
  std::string rationale;
};

struct FollowUpPlan {
  std::string concept_name;
  std::size_t missing_positive_count = 0;
  std::vector<std::pair<std::string, std::size_t>> missing_negative_pairs;
  std::vector<ProposedStimulus> proposed_stimuli;
};

struct FollowUpConfig {
  std::size_t max_proposals = 0;  // 0 = no cap
};

// Positive deficit first, then negative deficits by (deficit desc, name asc).
FollowUpPlan propose_followup(const CoverageReport& coverage, const GenerationPlan& plan,
                              const FollowUpConfig& config = {});

nlohmann::json followup_to_json(const FollowUpPlan& f);
std::string followup_to_csv(const FollowUpPlan& f);

struct Verdict {
  std::string concept_name;
  Decision decision = Decision::Inconclusive;
  CausalEvidence causal_evidence = CausalEvidence::Weak;
  CoverageLevel coverage_level = CoverageLevel::Low;
  std::optional<RegionScoreSet> train_scores;
  std::optional<RegionScoreSet> gen_eval_scores;
  std::optional<RegionScoreSet> meas_eval_scores;
  std::vector<SignificanceResult> significance;
  std::optional<GateDecision> gate;
  std::optional<CoverageReport> coverage;
  std::optional<FollowUpPlan> followup;
  std::size_t region_size = 0;
  std::vector<std::string> notes;
};

nlohmann::json region_scores_to_json(const RegionScoreSet& s);

// Human-readable report; `config_block` is echoed verbatim.
std::string render_verdict_text(const Verdict& v, const nlohmann::json& config_block);

// concept,decision,evidence,coverage,region_size,gen_pos,gen_causal,
// meas_causal,p_<criterion>...
std::string verdict_csv_header();
std::string verdict_csv_row(const Verdict& v);

}  // namespace causeloc
