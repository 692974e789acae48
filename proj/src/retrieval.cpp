#include "causeloc/retrieval.hpp"

#include <algorithm>
#include <numeric>

#include "causeloc/csv.hpp"
#include "causeloc/error.hpp"
#include "causeloc/parallel.hpp"

namespace causeloc {

std::vector<std::string> RetrievalResult::passed_ids() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked_ids.size() && i < verification.size(); ++i) {
    if (verification[i] == true) out.push_back(ranked_ids[i]);
  }
  return out;
}

double cosine_unit(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), "embedding dimension mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
  return std::clamp(dot, -1.0, 1.0);
}

namespace {

std::vector<double> all_similarities(std::span<const float> query, const EmbeddingIndex& index) {
  if (query.size() != index.dim) {
    fail(ErrorCode::InvalidArgument, "query dimension " + std::to_string(query.size()) +
                                         " differs from index dimension " +
                                         std::to_string(index.dim));
  }
  std::vector<double> sims(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) sims[i] = cosine_unit(query, index.row(i));
  return sims;
}

}  // namespace

RetrievalResult rank_by_similarity(std::span<const float> query, const EmbeddingIndex& index,
                                   std::size_t n, const std::string& query_name) {
  require(n >= 1, "n must be at least 1");
  auto sims = all_similarities(query, index);
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t take = std::min(n, order.size());
  auto by_desc = [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return index.ids[a] < index.ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    by_desc);
  RetrievalResult r;
  r.query = query_name;
  r.stage = RetrievalStage::SingleStage;
  for (std::size_t i = 0; i < take; ++i) {
    r.ranked_ids.push_back(index.ids[order[i]]);
    r.similarities.push_back(sims[order[i]]);
  }
  return r;
}

RetrievalResult two_stage_negative_retrieval(std::span<const float> negative_query,
                                             std::span<const float> positive_query,
                                             const EmbeddingIndex& index, std::size_t m,
                                             std::size_t n, const std::string& query_name) {
  require(m >= 1, "m must be at least 1");
  require(n <= m, "n must not exceed m");
  auto neg_sims = all_similarities(negative_query, index);
  auto pos_sims = all_similarities(positive_query, index);
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t stage1 = std::min(m, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(stage1), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (neg_sims[a] != neg_sims[b]) return neg_sims[a] > neg_sims[b];
                      return index.ids[a] < index.ids[b];
                    });
  order.resize(stage1);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pos_sims[a] != pos_sims[b]) return pos_sims[a] < pos_sims[b];
    return index.ids[a] < index.ids[b];
  });
  RetrievalResult r;
  r.query = query_name;
  r.stage = RetrievalStage::TwoStage;
  for (std::size_t i = 0; i < std::min(n, order.size()); ++i) {
    r.ranked_ids.push_back(index.ids[order[i]]);
    r.similarities.push_back(pos_sims[order[i]]);
    r.stage1_similarities.push_back(neg_sims[order[i]]);
  }
  return r;
}

RetrievalResult verify_batch(RetrievalResult result, const std::string& concept_name,
                             const VerifySpec& spec, ModelClient& client,
                             std::size_t max_in_flight, const RetryPolicy& policy) {
  if (spec.mode == VerifyMode::Double) {
    require(!spec.counter_concept.empty(), "double verification needs a counter concept");
  }
  std::vector<std::optional<bool>> outcome(result.ranked_ids.size());
  parallel_for(result.ranked_ids.size(), max_in_flight, [&](std::size_t i) {
    const auto& ref = result.ranked_ids[i];
    switch (spec.mode) {
      case VerifyMode::RequirePresent: {
        auto v = verify(ref, concept_name, client, policy);
        if (v != VerifyOutcome::Unverified) outcome[i] = v == VerifyOutcome::Present;
        break;
      }
      case VerifyMode::RequireAbsent: {
        auto v = verify(ref, concept_name, client, policy);
        if (v != VerifyOutcome::Unverified) outcome[i] = v == VerifyOutcome::Absent;
        break;
      }
      case VerifyMode::Double: {
        auto counter = verify(ref, spec.counter_concept, client, policy);
        auto target = verify(ref, concept_name, client, policy);
        bool counter_fail = counter == VerifyOutcome::Absent;
        bool target_fail = target == VerifyOutcome::Present;
        if (counter_fail || target_fail) {
          outcome[i] = false;
        } else if (counter == VerifyOutcome::Present && target == VerifyOutcome::Absent) {
          outcome[i] = true;
        }
        break;
      }
    }
  });
  result.verification = std::move(outcome);
  return result;
}

std::string retrieval_to_csv(const RetrievalResult& r) {
  std::string out = "rank,id,similarity,verification\n";
  for (std::size_t i = 0; i < r.ranked_ids.size(); ++i) {
    std::string v = "unchecked";
    if (i < r.verification.size()) {
      v = !r.verification[i] ? "unverified" : (*r.verification[i] ? "pass" : "fail");
    }
    out += csv::join_row({std::to_string(i + 1), r.ranked_ids[i],
                          csv::format_double(r.similarities[i]), v}) +
           "\n";
  }
  return out;
}

const char* to_string(CoverageLevel c) { return c == CoverageLevel::High ? "High" : "Low"; }

CoverageReport coverage_report(const std::string& concept_name, const StimulusManifest& manifest,
                               const RequestedCounts& requested,
                               const CoverageThresholds& thresholds,
                               std::optional<Source> source) {
  CoverageReport c;
  c.concept_name = concept_name;
  c.thresholds = thresholds;
  c.n_pos_requested = requested.n_pos;
  std::map<std::string, std::size_t> neg_verified;
  for (const auto& img : manifest.images) {
    if (source && img.source != *source) continue;
    if (img.role == Role::Positive && img.verified_present == true) ++c.n_pos_verified;
    if (img.role == Role::SemanticNegative && img.verified_absent == true && img.counter_concept) {
      ++neg_verified[*img.counter_concept];
    }
  }
  auto ratio = [](std::size_t verified, std::size_t req) {
    if (req == 0) return 0.0;
    return static_cast<double>(std::min(verified, req)) / static_cast<double>(req);
  };
  c.pos_zero_requested = c.n_pos_requested == 0;
  c.pos_coverage_ratio = ratio(c.n_pos_verified, c.n_pos_requested);

  std::size_t populated = 0;
  for (const auto& [counter, req] : requested.n_neg_per_counter) {
    CounterCoverage cc;
    cc.counter_concept = counter;
    cc.requested = req;
    auto it = neg_verified.find(counter);
    cc.verified = it == neg_verified.end() ? 0 : it->second;
    cc.zero_requested = req == 0;
    cc.ratio = ratio(cc.verified, req);
    if (cc.verified >= 1) ++populated;
    c.negatives.push_back(cc);
  }
  c.neg_zero_requested = c.negatives.empty();
  c.neg_pair_coverage_ratio =
      c.negatives.empty() ? 0.0
                          : static_cast<double>(populated) / static_cast<double>(c.negatives.size());
  bool high = c.pos_coverage_ratio >= thresholds.tau_pos &&
              c.neg_pair_coverage_ratio >= thresholds.tau_neg;
  c.level = high ? CoverageLevel::High : CoverageLevel::Low;
  return c;
}

nlohmann::json coverage_to_json(const CoverageReport& c) {
  nlohmann::json negs = nlohmann::json::array();
  for (const auto& n : c.negatives) {
    negs.push_back({{"counter_concept", n.counter_concept},
                    {"requested", n.requested},
                    {"verified", n.verified},
                    {"ratio", n.ratio},
                    {"zero_requested", n.zero_requested}});
  }
  return {{"concept", c.concept_name},
          {"n_pos_requested", c.n_pos_requested},
          {"n_pos_verified", c.n_pos_verified},
          {"pos_coverage_ratio", c.pos_coverage_ratio},
          {"neg_pair_coverage_ratio", c.neg_pair_coverage_ratio},
          {"pos_zero_requested", c.pos_zero_requested},
          {"neg_zero_requested", c.neg_zero_requested},
          {"coverage_level", to_string(c.level)},
          {"tau_pos", c.thresholds.tau_pos},
          {"tau_neg", c.thresholds.tau_neg},
          {"negatives", negs}};
}

}  // namespace causeloc
