#include "causeloc/region.hpp"

#include <algorithm>
#include <numeric>

#include "causeloc/csv.hpp"
#include "causeloc/error.hpp"

namespace causeloc {

const char* to_string(SelectionMode m) {
  return m == SelectionMode::PositiveCausal ? "PositiveCausal" : "TopK";
}

std::vector<std::size_t> rank_voxels(const std::vector<std::string>& voxel_ids,
                                     const ScoreVector& scores) {
  require(voxel_ids.size() == scores.size(), "scores and voxel ids differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return voxel_ids[a] < voxel_ids[b];
  });
  return order;
}

Region select_region_positive_causal(const VoxelScoreTable& scores,
                                     const std::string& concept_name) {
  if (!scores.has("s_causal")) {
    fail(ErrorCode::InvalidArgument, "score table has no causal scores");
  }
  Region r;
  r.concept_name = concept_name;
  r.mode = SelectionMode::PositiveCausal;
  r.selection_score_name = "s_causal";
  for (auto i : rank_voxels(scores.voxel_ids, scores.s_causal)) {
    if (!(scores.s_causal[i] > 0.0)) break;
    r.voxel_ids.push_back(scores.voxel_ids[i]);
    r.scores.push_back(scores.s_causal[i]);
  }
  return r;
}

Region select_region_top_k(const VoxelScoreTable& scores, const std::string& score_name,
                           std::size_t k, const std::string& concept_name) {
  require(k >= 1, "k must be at least 1");
  const auto& column = scores.column(score_name);
  Region r;
  r.concept_name = concept_name;
  r.mode = SelectionMode::TopK;
  r.k = k;
  r.selection_score_name = score_name;
  auto order = rank_voxels(scores.voxel_ids, column);
  r.short_region = order.size() < k;
  order.resize(std::min(k, order.size()));
  for (auto i : order) {
    r.voxel_ids.push_back(scores.voxel_ids[i]);
    r.scores.push_back(column[i]);
  }
  return r;
}

std::string region_to_csv(const Region& r) {
  std::string out = "rank,voxel_id,score\n";
  for (std::size_t i = 0; i < r.voxel_ids.size(); ++i) {
    out += csv::join_row({std::to_string(i + 1), r.voxel_ids[i], csv::format_double(r.scores[i])});
    out += "\n";
  }
  return out;
}

void write_region(const Region& r, const std::string& path) {
  csv::write_file(path, region_to_csv(r));
}

Region read_region(const std::string& path) {
  auto rows = csv::read_file(path);
  if (rows.empty() || rows.front() != std::vector<std::string>{"rank", "voxel_id", "score"}) {
    fail(ErrorCode::Parse, "region file must start with rank,voxel_id,score");
  }
  Region r;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 3) fail(ErrorCode::Parse, "bad region row " + std::to_string(i));
    r.voxel_ids.push_back(rows[i][1]);
    try {
      r.scores.push_back(std::stod(rows[i][2]));
    } catch (const std::exception&) {
      fail(ErrorCode::Parse, "bad score in region row " + std::to_string(i));
    }
  }
  r.k = r.voxel_ids.size();
  return r;
}

}  // namespace causeloc
