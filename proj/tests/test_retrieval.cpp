#include <doctest.h>

#include <map>

#include "causeloc/error.hpp"
#include "causeloc/retrieval.hpp"
#include "causeloc/rng.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace causeloc;

namespace {

EmbeddingIndex basis_index(const std::vector<std::string>& ids, std::size_t dim) {
  EmbeddingIndex idx;
  idx.dim = dim;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    idx.ids.push_back(ids[i]);
    for (std::size_t d = 0; d < dim; ++d) idx.vectors.push_back(d == i % dim ? 1.0f : 0.0f);
  }
  return idx;
}

// Verifier that answers from a fixed table keyed by (ref, concept).
StubOptions table_verifier(std::map<std::pair<std::string, std::string>, std::string> answers) {
  StubOptions opt;
  opt.verify_answer = [answers](const std::string& ref, const std::string& c) {
    auto it = answers.find({ref, c});
    return it == answers.end() ? std::string("unsure") : it->second;
  };
  return opt;
}

RetrievalResult listed(std::vector<std::string> ids) {
  RetrievalResult r;
  r.ranked_ids = std::move(ids);
  r.similarities.assign(r.ranked_ids.size(), 0.0);
  return r;
}

StimulusImage verified(std::string id, Role role, std::optional<std::string> counter = {}) {
  StimulusImage img;
  img.id = std::move(id);
  img.role = role;
  img.source = Source::RetrievedMeasured;
  img.counter_concept = std::move(counter);
  if (role == Role::Positive) img.verified_present = true;
  else img.verified_absent = true;
  return img;
}

}  // namespace

TEST_CASE("rank by similarity examples") {
  Rng rng(1);
  auto idx = gen::index(rng, 100, 8);
  std::vector<float> q(idx.row(17).begin(), idx.row(17).end());
  auto r = rank_by_similarity(q, idx, 5);
  CHECK(r.similarities[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(oracle::cosine(idx, 17, q) == r.similarities[0]);
  CHECK(r.ranked_ids == oracle::top_n(idx, q, 5));

  auto ortho = basis_index({"c", "a", "b"}, 4);
  std::vector<float> e3{0, 0, 0, 1};
  auto o = rank_by_similarity(e3, ortho, 3);
  CHECK(o.ranked_ids == std::vector<std::string>{"a", "b", "c"});
  CHECK(o.similarities == std::vector<double>{0, 0, 0});
  CHECK_THROWS_AS(rank_by_similarity(std::vector<float>{1, 0}, ortho, 1), Error);
}

TEST_CASE("two-stage retrieval on a four-vector index") {
  // a and b tie for negative similarity; a is far more aligned with the target.
  EmbeddingIndex idx;
  idx.dim = 3;
  auto add = [&](std::string id, std::vector<float> v) {
    normalize_unit(v);
    idx.ids.push_back(std::move(id));
    idx.vectors.insert(idx.vectors.end(), v.begin(), v.end());
  };
  add("a", {0.6f, 0.8f, 0});
  add("b", {0.6f, -0.8f, 0});
  add("c", {0.1f, 0, 1});
  add("d", {0, 0.2f, 1});
  std::vector<float> neg{1, 0, 0}, pos{0, 1, 0};
  auto r = two_stage_negative_retrieval(neg, pos, idx, 2, 1);
  CHECK(r.ranked_ids == std::vector<std::string>{"b"});
  CHECK(r.ranked_ids == oracle::two_stage(idx, neg, pos, 2, 1));
  CHECK_THROWS_AS(two_stage_negative_retrieval(neg, pos, idx, 2, 3), Error);

  auto flat = basis_index({"z", "y", "x"}, 4);
  auto t = two_stage_negative_retrieval(std::vector<float>{1, 0, 0, 0}, std::vector<float>{0, 0, 0, 1},
                                        flat, 3, 3);
  CHECK(t.ranked_ids == std::vector<std::string>{"x", "y", "z"});
}

TEST_CASE("two-stage retrieval matches enumeration on random indexes") {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    auto idx = gen::index(rng, 200, 6);
    auto neg = gen::unit_vector(rng, 6), pos = gen::unit_vector(rng, 6);
    std::size_t m = 1 + rng.below(60), n = rng.below(m + 1);
    CHECK(two_stage_negative_retrieval(neg, pos, idx, m, n).ranked_ids ==
          oracle::two_stage(idx, neg, pos, m, n));
    auto all = two_stage_negative_retrieval(neg, pos, idx, idx.size(), idx.size());
    auto ascending = oracle::two_stage(idx, pos, pos, idx.size(), idx.size());
    CHECK(all.ranked_ids == ascending);
  }
}

TEST_CASE("verify batch") {
  auto items = listed({"r1", "r2", "r3"});
  SUBCASE("all present") {
    StubClient stub(table_verifier({{{"r1", "dog"}, "yes"}, {{"r2", "dog"}, "yes"}, {{"r3", "dog"}, "yes"}}));
    auto r = verify_batch(items, "dog", {VerifyMode::RequirePresent, ""}, stub, 2, {0, {}});
    CHECK(r.passed_ids() == items.ranked_ids);
  }
  SUBCASE("double mode fails when target present") {
    StubOptions opt;
    opt.verify_answer = [](const std::string&, const std::string&) { return std::string("yes"); };
    StubClient stub(opt);
    auto r = verify_batch(items, "dog", {VerifyMode::Double, "wolf"}, stub, 2, {0, {}});
    CHECK(r.passed_ids().empty());
  }
  SUBCASE("conjunction truth table") {
    // (counter answer, target answer) -> expected
    StubClient stub(table_verifier({
        {{"r1", "wolf"}, "yes"}, {{"r1", "dog"}, "no"},   // pass
        {{"r2", "wolf"}, "yes"}, {{"r2", "dog"}, "yes"},  // target present
        {{"r3", "wolf"}, "no"}, {{"r3", "dog"}, "no"},    // counter missing
        {{"r4", "wolf"}, "no"}, {{"r4", "dog"}, "yes"},   // both wrong
        {{"r5", "dog"}, "no"},                            // counter unverified
        {{"r6", "wolf"}, "no"},                           // fails despite unverified target
    }));
    auto r = verify_batch(listed({"r1", "r2", "r3", "r4", "r5", "r6"}), "dog",
                          {VerifyMode::Double, "wolf"}, stub, 3, {0, {}});
    std::vector<std::optional<bool>> expected{true, false, false, false, std::nullopt, false};
    CHECK(r.verification == expected);
    CHECK(r.passed_ids() == std::vector<std::string>{"r1"});
  }
  SUBCASE("require absent") {
    StubClient stub(table_verifier({{{"r1", "dog"}, "no"}, {{"r2", "dog"}, "yes"}}));
    auto r = verify_batch(items, "dog", {VerifyMode::RequireAbsent, ""}, stub, 1, {0, {}});
    CHECK(r.verification == std::vector<std::optional<bool>>{true, false, std::nullopt});
  }
}

TEST_CASE("coverage report") {
  auto manifest = [](std::size_t pos, std::size_t populated) {
    StimulusManifest m;
    m.concept_name = "dog";
    for (std::size_t i = 0; i < pos; ++i) m.images.push_back(verified(gen::id("p", i), Role::Positive));
    for (std::size_t c = 0; c < populated; ++c) {
      m.images.push_back(verified(gen::id("n", c), Role::SemanticNegative, gen::id("c", c)));
    }
    return m;
  };
  RequestedCounts req;
  req.n_pos = 200;
  for (std::size_t c = 0; c < 10; ++c) req.n_neg_per_counter[gen::id("c", c)] = 10;

  auto full = coverage_report("dog", manifest(200, 10), req);
  CHECK(full.pos_coverage_ratio == 1.0);
  CHECK(full.neg_pair_coverage_ratio == 1.0);
  CHECK(full.level == CoverageLevel::High);

  auto none = coverage_report("dog", manifest(0, 10), req);
  CHECK(none.pos_coverage_ratio == 0.0);
  CHECK(none.level == CoverageLevel::Low);

  auto mid = coverage_report("dog", manifest(120, 4), req);
  CHECK(mid.pos_coverage_ratio == 0.6);
  CHECK(mid.neg_pair_coverage_ratio == 0.4);
  CHECK(mid.level == CoverageLevel::Low);

  auto other_source = manifest(200, 10);
  for (auto& img : other_source.images) img.source = Source::Generated;
  CHECK(coverage_report("dog", other_source, req, {}, Source::RetrievedMeasured).n_pos_verified == 0);
  CHECK(coverage_to_json(full).at("coverage_level") == "High");
}
