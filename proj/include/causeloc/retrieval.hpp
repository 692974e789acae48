#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "causeloc/clients.hpp"
#include "causeloc/matrix_store.hpp"
#include "causeloc/stimulus.hpp"

namespace causeloc {

enum class RetrievalStage { SingleStage, TwoStage };

struct RetrievalResult {
  std::string query;
  RetrievalStage stage = RetrievalStage::SingleStage;
  std::vector<std::string> ranked_ids;
  // Cosine under the final ranking criterion (the positive-concept
  // similarity for TwoStage).
  std::vector<double> similarities;
  // TwoStage only: cosine with the negative concept.
  std::vector<double> stage1_similarities;
  // Empty until verify_batch; nullopt = unverified.
  std::vector<std::optional<bool>> verification;

  std::vector<std::string> passed_ids() const;
};

double cosine_unit(std::span<const float> a, std::span<const float> b);

// Top-n rows by cosine with query, descending, id-ascending ties.
RetrievalResult rank_by_similarity(std::span<const float> query, const EmbeddingIndex& index,
                                   std::size_t n, const std::string& query_name = {});

inline constexpr std::size_t kDefaultStageOneCandidates = 100;

// Stage 1: top-m by alignment with the negative concept. Stage 2: those m
// re-sorted by alignment with the positive concept, ascending. Returns the
// first n.
RetrievalResult two_stage_negative_retrieval(std::span<const float> negative_query,
                                             std::span<const float> positive_query,
                                             const EmbeddingIndex& index, std::size_t m,
                                             std::size_t n, const std::string& query_name = {});

enum class VerifyMode { RequirePresent, RequireAbsent, Double };

struct VerifySpec {
  VerifyMode mode = VerifyMode::RequirePresent;
  std::string counter_concept;  // Double only
};

// Populates verification. Double passes iff the counter concept is present
// and the target absent; any failed check fails, otherwise an unverified
// check leaves the item unverified. At most max_in_flight concurrent calls.
RetrievalResult verify_batch(RetrievalResult result, const std::string& concept_name,
                             const VerifySpec& spec, ModelClient& client,
                             std::size_t max_in_flight = 8, const RetryPolicy& policy = {});

std::string retrieval_to_csv(const RetrievalResult& r);

enum class CoverageLevel { High, Low };

const char* to_string(CoverageLevel c);

struct CoverageThresholds {
  double tau_pos = 0.5;
  double tau_neg = 0.5;
};

struct RequestedCounts {
  std::size_t n_pos = 0;
  std::map<std::string, std::size_t> n_neg_per_counter;
};

struct CounterCoverage {
  std::string counter_concept;
  std::size_t requested = 0;
  std::size_t verified = 0;
  double ratio = 0.0;
  bool zero_requested = false;
};

struct CoverageReport {
  std::string concept_name;
  std::size_t n_pos_requested = 0;
  std::size_t n_pos_verified = 0;
  std::vector<CounterCoverage> negatives;  // counter concept order
  double pos_coverage_ratio = 0.0;
  // Fraction of requested counter concepts with at least one verified
  // negative.
  double neg_pair_coverage_ratio = 0.0;
  bool pos_zero_requested = false;
  bool neg_zero_requested = false;
  CoverageLevel level = CoverageLevel::Low;
  CoverageThresholds thresholds;
};

// Counts verified positives (verified_present) and verified negatives
// (verified_absent) per counter concept. With source set, only images from
// that source are counted.
CoverageReport coverage_report(const std::string& concept_name, const StimulusManifest& manifest,
                               const RequestedCounts& requested,
                               const CoverageThresholds& thresholds = {},
                               std::optional<Source> source = std::nullopt);

nlohmann::json coverage_to_json(const CoverageReport& c);

}  // namespace causeloc
