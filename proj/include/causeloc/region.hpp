#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "causeloc/scoring.hpp"

namespace causeloc {

enum class SelectionMode { PositiveCausal, TopK };

const char* to_string(SelectionMode m);

struct Region {
  std::string concept_name;
  std::vector<std::string> voxel_ids;  // descending score, id-ascending ties
  std::vector<double> scores;          // parallel to voxel_ids
  SelectionMode mode = SelectionMode::TopK;
  std::size_t k = 0;                   // TopK only
  std::string selection_score_name;
  // TopK asked for more voxels than the table holds.
  bool short_region = false;

  bool empty() const { return voxel_ids.empty(); }
};

inline constexpr std::size_t kDefaultRegionSize = 100;
inline constexpr std::size_t kRegionSizeSweep[] = {50, 100, 200, 500, 1000};

// Voxel indices ordered by (score desc, id asc).
std::vector<std::size_t> rank_voxels(const std::vector<std::string>& voxel_ids,
                                     const ScoreVector& scores);

// Voxels with s_causal > 0; may be empty.
Region select_region_positive_causal(const VoxelScoreTable& scores,
                                     const std::string& concept_name = {});

Region select_region_top_k(const VoxelScoreTable& scores, const std::string& score_name,
                           std::size_t k, const std::string& concept_name = {});

// rank,voxel_id,score
std::string region_to_csv(const Region& r);
void write_region(const Region& r, const std::string& path);
Region read_region(const std::string& path);

}  // namespace causeloc
