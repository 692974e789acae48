#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "causeloc/clients.hpp"
#include "causeloc/region.hpp"
#include "causeloc/retrieval.hpp"
#include "causeloc/scoring.hpp"
#include "causeloc/stats.hpp"
#include "causeloc/stimulus.hpp"
#include "causeloc/verdict.hpp"

namespace causeloc {

enum class BackendKind { Simulator, Stub, Http };
enum class NormalizationMode { Own, None };

struct BackendConfig {
  BackendKind kind = BackendKind::Simulator;
  std::string world;            // simulator: world spec path
  std::string endpoint;         // http: base url (CAUSELOC_ENDPOINT overrides)
  std::size_t voxel_dim = 8;    // stub/http: encoder output size
  // Optional measured-data inputs for stub/http backends.
  std::string measured_responses;   // BCRM, measured activations
  std::string predicted_measured;   // BCRM, encoder predictions, same ids
  std::string measured_index;       // BCEI keyed by measured image ref
  std::string pool_index;           // BCEI keyed by pool image ref
};

struct RetrievalConfig {
  std::size_t stage_one_candidates = kDefaultStageOneCandidates;
  std::size_t measured_positives = 200;
  std::size_t measured_negatives_per_counter = 10;
  std::size_t pool_positives = 100;
  std::size_t pool_negatives_per_counter = 10;
};

struct PipelineConfig {
  std::vector<std::string> concepts;
  // Baseline concepts per target; targets without an entry use every other
  // configured concept.
  std::map<std::string, std::vector<std::string>> baselines;
  PlanConfig plan;
  SelectionMode region_mode = SelectionMode::TopK;
  std::size_t region_k = kDefaultRegionSize;
  std::string region_score = "combined";
  ComponentWeights weights = default_combination_weights();
  bool standardize_components = false;
  std::size_t k_negatives = kDefaultHardNegatives;
  CoverageThresholds coverage;
  double alpha = kDefaultAlpha;
  std::set<Criterion> required_criteria = {Criterion::ActivationGen, Criterion::CausalGen};
  EvidenceThresholds evidence;
  bool reliability_filter = true;
  double reliability_threshold = kDefaultReliabilityThreshold;
  NormalizationMode normalization = NormalizationMode::Own;
  RetrievalConfig retrieval;
  FollowUpConfig followup;
  BackendConfig backend;
  std::size_t max_in_flight = 8;
  RetryPolicy retry;
  std::uint64_t seed = 42;
  // Not part of the fingerprint: they must not change any output.
  std::size_t workers = 1;
  std::string output_dir = "causeloc_out";
};

// Parses and validates; relative paths resolve against base_dir. Throws
// Error(Config) on unknown keys, unknown score components or thresholds out
// of range.
PipelineConfig config_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
PipelineConfig read_config(const std::string& path);
void validate_config(const PipelineConfig& c);

// Canonical form (defaults filled in, workers/output_dir omitted).
nlohmann::json config_to_json(const PipelineConfig& c);
std::string config_fingerprint(const PipelineConfig& c);

struct ConceptReport {
  std::string concept_name;
  bool ok = false;
  std::string error;
  Verdict verdict;
  std::vector<std::string> degraded;  // per-item client failures
};

struct PipelineResult {
  std::vector<ConceptReport> reports;
  int exit_code = 0;  // 0 ok, 1 fatal config/input, 2 partial failures
  std::string fatal_error;
};

// Runs every concept and writes the output tree under config.output_dir.
PipelineResult run_pipeline(const PipelineConfig& config);

// Sorted by voxel id: voxel_id,score
std::string score_map_csv(const VoxelScoreTable& t, const std::string& which);
void export_score_map(const VoxelScoreTable& t, const std::string& which, const std::string& path);
// Reads a score map back as (voxel ids, scores).
std::pair<std::vector<std::string>, ScoreVector> read_score_map(const std::string& path);

std::string concept_slug(const std::string& concept_name);

// Scoring inputs for one split: verified positives (or every positive when
// require_verified_positive is false), verified negatives, and verified
// edits of included positives. Images missing from `available` are skipped.
ScoringInputs manifest_scoring_inputs(const StimulusManifest& m, Split split, std::size_t k,
                                      const std::vector<std::string>& available,
                                      bool require_verified_positive = true);

}  // namespace causeloc
