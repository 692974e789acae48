#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "causeloc/matrix_store.hpp"

namespace causeloc {

using ScoreVector = std::vector<double>;
// Positive id -> its counterfactual edit ids.
using EditPairs = std::map<std::string, std::vector<std::string>>;

inline constexpr std::size_t kDefaultHardNegatives = 10;

// Ranking-signal names: {Max Activation, Causal Semantic, Causal Edits} x
// data source (Generated, Measured, pool, filtered pooL).
inline constexpr std::array<std::string_view, 8> kComponentNames = {
    "CEG", "CSG", "CSL", "MALF", "CSM", "MAG", "MAM", "MAL"};
inline constexpr std::array<std::string_view, 5> kDefaultCombination = {
    "CEG", "CSG", "CSL", "MALF", "CSM"};

bool is_component_name(std::string_view name);

ScoreVector positive_score(const ResponseMatrix& m, const std::vector<std::string>& positives);

ScoreVector semantic_negative_score(const ResponseMatrix& m,
                                    const std::vector<std::string>& positives,
                                    const std::vector<std::string>& negatives,
                                    std::size_t k = kDefaultHardNegatives);

// The min(k, |negatives|) negatives with the highest activation on one
// voxel, ordered by (activation desc, id asc).
std::vector<std::string> hardest_negatives(const ResponseMatrix& m,
                                           const std::vector<std::string>& negatives,
                                           std::size_t voxel,
                                           std::size_t k = kDefaultHardNegatives);

struct CounterfactualScore {
  ScoreVector score;
  std::size_t n_pairs_used = 0;
  std::size_t n_positives_without_edits = 0;
};

CounterfactualScore counterfactual_score(const ResponseMatrix& m, const EditPairs& pairs);

ScoreVector causal_score(const ScoreVector& s_neg, const ScoreVector& s_edit);

using ComponentScores = std::map<std::string, ScoreVector>;
using ComponentWeights = std::map<std::string, double>;

// Weighted sum of the named components. Empty weights means every
// component present with weight 1. With standardize, each component is
// z-scored across voxels (population std) before weighting.
ScoreVector combined_ranking_score(const ComponentScores& components,
                                   const ComponentWeights& weights = {},
                                   bool standardize = false);

ComponentWeights default_combination_weights();

ScoreVector baseline_max_activation(const ResponseMatrix& m,
                                    const std::vector<std::string>& positives);

struct ScoringInputs {
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
  EditPairs edits;
  std::size_t k = kDefaultHardNegatives;
};

struct ScoreCounts {
  std::size_t n_positives = 0;
  std::size_t n_negatives = 0;
  std::size_t n_negatives_used = 0;
  std::size_t n_edit_pairs_used = 0;
  std::size_t n_positives_without_edits = 0;
};

struct VoxelScoreTable {
  std::vector<std::string> voxel_ids;
  ScoreVector s_pos;
  ScoreVector s_neg;     // empty when no semantic negatives
  ScoreVector s_edit;    // empty when no counterfactual pairs
  ScoreVector s_causal;  // empty when neither specificity score exists
  ComponentScores components;
  ScoreCounts counts;
  // Only one of s_neg / s_edit was available; s_causal equals that one.
  bool partial_causal = false;

  bool has(std::string_view name) const;
  const ScoreVector& column(std::string_view name) const;
  // s_pos, s_neg, s_edit, s_causal (those present), then components.
  std::vector<std::string> score_names() const;
};

VoxelScoreTable score_voxels(const ResponseMatrix& m, const ScoringInputs& inputs);

struct RegionScoreSet {
  double s_pos = 0.0;
  std::optional<double> s_neg;
  std::optional<double> s_edit;
  std::optional<double> s_causal;
  bool partial_causal = false;
  ScoreCounts counts;
};

// Region-mean activation a_R(x) over the given voxels, in double, per row.
std::vector<double> region_signal(const ResponseMatrix& m, const std::vector<std::string>& voxel_ids);

// Scores computed on the region-mean signal: hardest negatives and edits
// are selected on a_R itself.
RegionScoreSet region_scores(const ResponseMatrix& m, const ScoringInputs& inputs,
                             const std::vector<std::string>& region_voxels);

std::string score_table_to_csv(const VoxelScoreTable& t);
VoxelScoreTable score_table_from_csv(const std::vector<std::vector<std::string>>& rows);
void write_score_table(const VoxelScoreTable& t, const std::string& path);
VoxelScoreTable read_score_table(const std::string& path);
// One row per score name, one column per voxel, float32.
ResponseMatrix score_table_to_matrix(const VoxelScoreTable& t);

}  // namespace causeloc
