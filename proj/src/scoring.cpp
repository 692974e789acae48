#include "causeloc/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_set>

#include "causeloc/csv.hpp"
#include "causeloc/error.hpp"

namespace causeloc {

namespace {

std::vector<std::size_t> rows_for(const std::unordered_map<std::string, std::size_t>& rows,
                                  const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = rows.find(id);
    if (it == rows.end()) fail(ErrorCode::InvalidArgument, "image '" + id + "' not in matrix");
    out.push_back(it->second);
  }
  return out;
}

void require_disjoint(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::unordered_set<std::string> set(a.begin(), a.end());
  for (const auto& id : b) {
    if (set.count(id)) {
      fail(ErrorCode::InvalidArgument, "image '" + id + "' is both positive and negative");
    }
  }
}

struct ResolvedPairs {
  std::vector<std::size_t> parent;
  std::vector<std::vector<std::size_t>> edits;
  std::size_t without_edits = 0;
};

ResolvedPairs resolve_pairs(const std::unordered_map<std::string, std::size_t>& rows,
                            const EditPairs& pairs) {
  ResolvedPairs out;
  for (const auto& [pos, edits] : pairs) {
    if (edits.empty()) {
      ++out.without_edits;
      continue;
    }
    out.parent.push_back(rows_for(rows, {pos}).front());
    out.edits.push_back(rows_for(rows, edits));
  }
  if (out.parent.empty()) fail(ErrorCode::InvalidArgument, "no counterfactual pairs");
  return out;
}

// Kernels take an accessor a(row) -> double for one voxel or signal.

template <typename Act>
double mean_over(const Act& a, const std::vector<std::size_t>& rows) {
  double sum = 0.0;
  for (auto r : rows) sum += a(r);
  return sum / static_cast<double>(rows.size());
}

// Mean of the k largest activations. Values are summed in descending order
// so the result does not depend on the order of `rows`.
template <typename Act>
double hardest_mean(const Act& a, const std::vector<std::size_t>& rows, std::size_t k,
                    std::vector<double>& scratch) {
  scratch.clear();
  for (auto r : rows) scratch.push_back(a(r));
  std::size_t take = std::min(k, scratch.size());
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(take),
                    scratch.end(), std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < take; ++i) sum += scratch[i];
  return sum / static_cast<double>(take);
}

template <typename Act>
double edit_mean(const Act& a, const ResolvedPairs& pairs) {
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.parent.size(); ++i) {
    double hardest = -INFINITY;
    for (auto r : pairs.edits[i]) hardest = std::max(hardest, a(r));
    sum += a(pairs.parent[i]) - hardest;
  }
  return sum / static_cast<double>(pairs.parent.size());
}

const std::vector<std::string>& require_positives(const std::vector<std::string>& p) {
  if (p.empty()) fail(ErrorCode::InvalidArgument, "no positives");
  return p;
}

const std::vector<std::string>& require_negatives(const std::vector<std::string>& n) {
  if (n.empty()) fail(ErrorCode::InvalidArgument, "no semantic negatives");
  return n;
}

}  // namespace

bool is_component_name(std::string_view name) {
  return std::find(kComponentNames.begin(), kComponentNames.end(), name) != kComponentNames.end();
}

ScoreVector positive_score(const ResponseMatrix& m, const std::vector<std::string>& positives) {
  auto pos = rows_for(index_of(m.image_ids), require_positives(positives));
  ScoreVector out(m.n_voxels());
  for (std::size_t v = 0; v < m.n_voxels(); ++v) {
    out[v] = mean_over([&](std::size_t r) { return double{m.at(r, v)}; }, pos);
  }
  return out;
}

ScoreVector semantic_negative_score(const ResponseMatrix& m,
                                    const std::vector<std::string>& positives,
                                    const std::vector<std::string>& negatives, std::size_t k) {
  require_positives(positives);
  require_negatives(negatives);
  require(k >= 1, "k must be at least 1");
  require_disjoint(positives, negatives);
  auto rows = index_of(m.image_ids);
  auto pos = rows_for(rows, positives);
  auto neg = rows_for(rows, negatives);
  ScoreVector out(m.n_voxels());
  std::vector<double> scratch;
  for (std::size_t v = 0; v < m.n_voxels(); ++v) {
    auto a = [&](std::size_t r) { return double{m.at(r, v)}; };
    out[v] = mean_over(a, pos) - hardest_mean(a, neg, k, scratch);
  }
  return out;
}

std::vector<std::string> hardest_negatives(const ResponseMatrix& m,
                                           const std::vector<std::string>& negatives,
                                           std::size_t voxel, std::size_t k) {
  require(voxel < m.n_voxels(), "voxel out of range");
  auto neg = rows_for(index_of(m.image_ids), require_negatives(negatives));
  std::vector<std::size_t> order(neg.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    float va = m.at(neg[a], voxel), vb = m.at(neg[b], voxel);
    if (va != vb) return va > vb;
    return negatives[a] < negatives[b];
  });
  order.resize(std::min(k, order.size()));
  std::vector<std::string> out;
  for (auto i : order) out.push_back(negatives[i]);
  return out;
}

CounterfactualScore counterfactual_score(const ResponseMatrix& m, const EditPairs& pairs) {
  auto resolved = resolve_pairs(index_of(m.image_ids), pairs);
  CounterfactualScore out;
  out.n_pairs_used = resolved.parent.size();
  out.n_positives_without_edits = resolved.without_edits;
  out.score.resize(m.n_voxels());
  for (std::size_t v = 0; v < m.n_voxels(); ++v) {
    out.score[v] = edit_mean([&](std::size_t r) { return double{m.at(r, v)}; }, resolved);
  }
  return out;
}

ScoreVector causal_score(const ScoreVector& s_neg, const ScoreVector& s_edit) {
  require(s_neg.size() == s_edit.size(), "score vectors differ in length");
  ScoreVector out(s_neg.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (s_neg[i] + s_edit[i]);
  return out;
}

ComponentWeights default_combination_weights() {
  ComponentWeights w;
  for (auto name : kDefaultCombination) w.emplace(std::string(name), 1.0);
  return w;
}

ScoreVector combined_ranking_score(const ComponentScores& components,
                                   const ComponentWeights& weights, bool standardize) {
  ComponentWeights effective = weights;
  if (effective.empty()) {
    for (const auto& [name, _] : components) effective.emplace(name, 1.0);
  }
  require(!effective.empty(), "no components to combine");
  std::size_t n = 0;
  bool first = true;
  for (const auto& [name, _] : effective) {
    if (!is_component_name(name)) fail(ErrorCode::InvalidArgument, "unknown component '" + name + "'");
    auto it = components.find(name);
    if (it == components.end()) {
      fail(ErrorCode::InvalidArgument, "component '" + name + "' not available");
    }
    if (first) {
      n = it->second.size();
      first = false;
    }
    require(it->second.size() == n, "component vectors differ in length");
  }
  ScoreVector out(n, 0.0);
  for (const auto& [name, weight] : effective) {
    const auto& c = components.at(name);
    double mean = 0.0, sd = 1.0;
    if (standardize && n > 0) {
      for (double x : c) mean += x;
      mean /= static_cast<double>(n);
      double ss = 0.0;
      for (double x : c) ss += (x - mean) * (x - mean);
      sd = std::sqrt(ss / static_cast<double>(n));
      if (sd == 0.0) sd = 1.0;
    }
    for (std::size_t i = 0; i < n; ++i) out[i] += weight * ((c[i] - mean) / sd);
  }
  return out;
}

ScoreVector baseline_max_activation(const ResponseMatrix& m,
                                    const std::vector<std::string>& positives) {
  return positive_score(m, positives);
}

bool VoxelScoreTable::has(std::string_view name) const {
  if (name == "s_pos") return !s_pos.empty() || voxel_ids.empty();
  if (name == "s_neg") return !s_neg.empty();
  if (name == "s_edit") return !s_edit.empty();
  if (name == "s_causal") return !s_causal.empty();
  return components.count(std::string(name)) > 0;
}

const ScoreVector& VoxelScoreTable::column(std::string_view name) const {
  if (!has(name)) fail(ErrorCode::InvalidArgument, "unknown score '" + std::string(name) + "'");
  if (name == "s_pos") return s_pos;
  if (name == "s_neg") return s_neg;
  if (name == "s_edit") return s_edit;
  if (name == "s_causal") return s_causal;
  return components.at(std::string(name));
}

std::vector<std::string> VoxelScoreTable::score_names() const {
  std::vector<std::string> names;
  for (const char* n : {"s_pos", "s_neg", "s_edit", "s_causal"}) {
    if (has(n)) names.emplace_back(n);
  }
  for (const auto& [name, _] : components) names.push_back(name);
  return names;
}

VoxelScoreTable score_voxels(const ResponseMatrix& m, const ScoringInputs& in) {
  require_positives(in.positives);
  require(in.k >= 1, "k must be at least 1");
  auto rows = index_of(m.image_ids);
  auto pos = rows_for(rows, in.positives);
  std::vector<std::size_t> neg;
  if (!in.negatives.empty()) {
    require_disjoint(in.positives, in.negatives);
    neg = rows_for(rows, in.negatives);
  }
  std::optional<ResolvedPairs> pairs;
  bool any_edit = std::any_of(in.edits.begin(), in.edits.end(),
                              [](const auto& p) { return !p.second.empty(); });
  if (any_edit) pairs = resolve_pairs(rows, in.edits);

  VoxelScoreTable t;
  t.voxel_ids = m.voxel_ids;
  const std::size_t nv = m.n_voxels();
  t.s_pos.resize(nv);
  if (!neg.empty()) t.s_neg.resize(nv);
  if (pairs) t.s_edit.resize(nv);
  std::vector<double> scratch;
  for (std::size_t v = 0; v < nv; ++v) {
    auto a = [&](std::size_t r) { return double{m.at(r, v)}; };
    t.s_pos[v] = mean_over(a, pos);
    if (!neg.empty()) t.s_neg[v] = t.s_pos[v] - hardest_mean(a, neg, in.k, scratch);
    if (pairs) t.s_edit[v] = edit_mean(a, *pairs);
  }
  if (!t.s_neg.empty() && !t.s_edit.empty()) {
    t.s_causal = causal_score(t.s_neg, t.s_edit);
  } else if (!t.s_neg.empty()) {
    t.s_causal = t.s_neg;
    t.partial_causal = true;
  } else if (!t.s_edit.empty()) {
    t.s_causal = t.s_edit;
    t.partial_causal = true;
  }
  t.counts.n_positives = pos.size();
  t.counts.n_negatives = neg.size();
  t.counts.n_negatives_used = std::min(in.k, neg.size());
  t.counts.n_edit_pairs_used = pairs ? pairs->parent.size() : 0;
  t.counts.n_positives_without_edits =
      pairs ? pairs->without_edits : static_cast<std::size_t>(in.edits.size());
  return t;
}

std::vector<double> region_signal(const ResponseMatrix& m,
                                  const std::vector<std::string>& voxel_ids) {
  if (voxel_ids.empty()) fail(ErrorCode::InvalidArgument, "empty region");
  auto cols = index_of(m.voxel_ids);
  std::vector<std::size_t> idx;
  idx.reserve(voxel_ids.size());
  for (const auto& id : voxel_ids) {
    auto it = cols.find(id);
    if (it == cols.end()) fail(ErrorCode::InvalidArgument, "region voxel '" + id + "' not in matrix");
    idx.push_back(it->second);
  }
  std::vector<double> out(m.n_images());
  for (std::size_t r = 0; r < m.n_images(); ++r) {
    double sum = 0.0;
    for (auto c : idx) sum += m.at(r, c);
    out[r] = sum / static_cast<double>(idx.size());
  }
  return out;
}

RegionScoreSet region_scores(const ResponseMatrix& m, const ScoringInputs& in,
                             const std::vector<std::string>& region_voxels) {
  auto signal = region_signal(m, region_voxels);
  require_positives(in.positives);
  auto rows = index_of(m.image_ids);
  auto a = [&](std::size_t r) { return signal[r]; };

  RegionScoreSet out;
  auto pos = rows_for(rows, in.positives);
  out.s_pos = mean_over(a, pos);
  out.counts.n_positives = pos.size();
  if (!in.negatives.empty()) {
    require_disjoint(in.positives, in.negatives);
    auto neg = rows_for(rows, in.negatives);
    std::vector<double> scratch;
    out.s_neg = out.s_pos - hardest_mean(a, neg, in.k, scratch);
    out.counts.n_negatives = neg.size();
    out.counts.n_negatives_used = std::min(in.k, neg.size());
  }
  bool any_edit = std::any_of(in.edits.begin(), in.edits.end(),
                              [](const auto& p) { return !p.second.empty(); });
  if (any_edit) {
    auto pairs = resolve_pairs(rows, in.edits);
    out.s_edit = edit_mean(a, pairs);
    out.counts.n_edit_pairs_used = pairs.parent.size();
    out.counts.n_positives_without_edits = pairs.without_edits;
  }
  if (out.s_neg && out.s_edit) {
    out.s_causal = 0.5 * (*out.s_neg + *out.s_edit);
  } else if (out.s_neg || out.s_edit) {
    out.s_causal = out.s_neg ? *out.s_neg : *out.s_edit;
    out.partial_causal = true;
  }
  return out;
}

std::string score_table_to_csv(const VoxelScoreTable& t) {
  auto names = t.score_names();
  std::vector<std::string> header = {"voxel_id"};
  header.insert(header.end(), names.begin(), names.end());
  std::string out = csv::join_row(header) + "\n";
  for (std::size_t v = 0; v < t.voxel_ids.size(); ++v) {
    std::vector<std::string> row = {t.voxel_ids[v]};
    for (const auto& n : names) row.push_back(csv::format_double(t.column(n)[v]));
    out += csv::join_row(row) + "\n";
  }
  return out;
}

VoxelScoreTable score_table_from_csv(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty() || rows.front().empty() || rows.front().front() != "voxel_id") {
    fail(ErrorCode::Parse, "score table must start with a voxel_id header");
  }
  const auto& header = rows.front();
  VoxelScoreTable t;
  std::vector<ScoreVector*> targets;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto& name = header[c];
    if (name == "s_pos") targets.push_back(&t.s_pos);
    else if (name == "s_neg") targets.push_back(&t.s_neg);
    else if (name == "s_edit") targets.push_back(&t.s_edit);
    else if (name == "s_causal") targets.push_back(&t.s_causal);
    else targets.push_back(&t.components[name]);
  }
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size()) {
      fail(ErrorCode::Parse, "score table row " + std::to_string(r) + " has wrong width");
    }
    t.voxel_ids.push_back(row[0]);
    for (std::size_t c = 1; c < row.size(); ++c) {
      try {
        targets[c - 1]->push_back(std::stod(row[c]));
      } catch (const std::exception&) {
        fail(ErrorCode::Parse, "bad number '" + row[c] + "' in score table");
      }
    }
  }
  return t;
}

void write_score_table(const VoxelScoreTable& t, const std::string& path) {
  csv::write_file(path, score_table_to_csv(t));
}

VoxelScoreTable read_score_table(const std::string& path) {
  return score_table_from_csv(csv::read_file(path));
}

ResponseMatrix score_table_to_matrix(const VoxelScoreTable& t) {
  auto names = t.score_names();
  ResponseMatrix m(names, t.voxel_ids, Provenance::Predicted);
  for (std::size_t r = 0; r < names.size(); ++r) {
    const auto& col = t.column(names[r]);
    for (std::size_t v = 0; v < t.voxel_ids.size(); ++v) m.at(r, v) = static_cast<float>(col[v]);
  }
  return m;
}

}  // namespace causeloc
