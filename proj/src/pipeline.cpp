#include "causeloc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "causeloc/csv.hpp"
#include "causeloc/error.hpp"
#include "causeloc/hash.hpp"
#include "causeloc/matrix_store.hpp"
#include "causeloc/parallel.hpp"
#include "causeloc/simulator.hpp"

namespace fs = std::filesystem;

namespace causeloc {

// --- config ------------------------------------------------------------------

namespace {

const char* to_string(BackendKind k) {
  switch (k) {
    case BackendKind::Simulator: return "simulator";
    case BackendKind::Stub: return "stub";
    case BackendKind::Http: return "http";
  }
  return "?";
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::Config, where + " must be an object");
  for (auto& [key, _] : j.items()) {
    if (!known.count(key)) fail(ErrorCode::Config, "unknown key '" + key + "' in " + where);
  }
}

std::string resolve(const std::string& base_dir, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

template <typename T>
void get_to(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig config_from_json(const nlohmann::json& j, const std::string& base_dir) {
  PipelineConfig c;
  try {
    check_keys(j,
               {"concepts", "baselines", "plan", "region", "weights", "standardize_components",
                "k_negatives", "coverage", "alpha", "required_criteria", "evidence",
                "reliability", "normalization", "retrieval", "followup", "backend",
                "max_in_flight", "retry", "seed", "workers", "output_dir"},
               "config");
    c.concepts = j.at("concepts").get<std::vector<std::string>>();
    get_to(j, "baselines", c.baselines);
    if (j.contains("plan")) c.plan = plan_config_from_json(j.at("plan"));
    if (j.contains("region")) {
      const auto& r = j.at("region");
      check_keys(r, {"mode", "k", "score"}, "region");
      auto mode = r.value("mode", "top-k");
      if (mode == "top-k") c.region_mode = SelectionMode::TopK;
      else if (mode == "positive-causal") c.region_mode = SelectionMode::PositiveCausal;
      else fail(ErrorCode::Config, "region.mode must be top-k or positive-causal");
      get_to(r, "k", c.region_k);
      get_to(r, "score", c.region_score);
    }
    if (j.contains("weights")) c.weights = j.at("weights").get<ComponentWeights>();
    get_to(j, "standardize_components", c.standardize_components);
    get_to(j, "k_negatives", c.k_negatives);
    if (j.contains("coverage")) {
      const auto& cv = j.at("coverage");
      check_keys(cv, {"tau_pos", "tau_neg"}, "coverage");
      get_to(cv, "tau_pos", c.coverage.tau_pos);
      get_to(cv, "tau_neg", c.coverage.tau_neg);
    }
    get_to(j, "alpha", c.alpha);
    if (j.contains("required_criteria")) {
      c.required_criteria.clear();
      for (const auto& s : j.at("required_criteria").get<std::vector<std::string>>()) {
        c.required_criteria.insert(parse_criterion(s));
      }
    }
    if (j.contains("evidence")) {
      const auto& e = j.at("evidence");
      check_keys(e, {"min_gen_causal", "min_meas_causal"}, "evidence");
      get_to(e, "min_gen_causal", c.evidence.min_gen_causal);
      get_to(e, "min_meas_causal", c.evidence.min_meas_causal);
    }
    if (j.contains("reliability")) {
      const auto& r = j.at("reliability");
      check_keys(r, {"enabled", "threshold"}, "reliability");
      get_to(r, "enabled", c.reliability_filter);
      get_to(r, "threshold", c.reliability_threshold);
    }
    if (j.contains("normalization")) {
      auto n = j.at("normalization").get<std::string>();
      if (n == "own") c.normalization = NormalizationMode::Own;
      else if (n == "none") c.normalization = NormalizationMode::None;
      else fail(ErrorCode::Config, "normalization must be own or none");
    }
    if (j.contains("retrieval")) {
      const auto& r = j.at("retrieval");
      check_keys(r, {"stage_one_candidates", "measured_positives", "measured_negatives_per_counter",
                     "pool_positives", "pool_negatives_per_counter"},
                 "retrieval");
      get_to(r, "stage_one_candidates", c.retrieval.stage_one_candidates);
      get_to(r, "measured_positives", c.retrieval.measured_positives);
      get_to(r, "measured_negatives_per_counter", c.retrieval.measured_negatives_per_counter);
      get_to(r, "pool_positives", c.retrieval.pool_positives);
      get_to(r, "pool_negatives_per_counter", c.retrieval.pool_negatives_per_counter);
    }
    if (j.contains("followup")) {
      const auto& f = j.at("followup");
      check_keys(f, {"max_proposals"}, "followup");
      get_to(f, "max_proposals", c.followup.max_proposals);
    }
    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      check_keys(b, {"kind", "world", "endpoint", "voxel_dim", "measured_responses",
                     "predicted_measured", "measured_index", "pool_index"},
                 "backend");
      auto kind = b.value("kind", "simulator");
      if (kind == "simulator") c.backend.kind = BackendKind::Simulator;
      else if (kind == "stub") c.backend.kind = BackendKind::Stub;
      else if (kind == "http") c.backend.kind = BackendKind::Http;
      else fail(ErrorCode::Config, "backend.kind must be simulator, stub or http");
      c.backend.world = resolve(base_dir, b.value("world", ""));
      c.backend.endpoint = b.value("endpoint", "");
      get_to(b, "voxel_dim", c.backend.voxel_dim);
      c.backend.measured_responses = resolve(base_dir, b.value("measured_responses", ""));
      c.backend.predicted_measured = resolve(base_dir, b.value("predicted_measured", ""));
      c.backend.measured_index = resolve(base_dir, b.value("measured_index", ""));
      c.backend.pool_index = resolve(base_dir, b.value("pool_index", ""));
    }
    get_to(j, "max_in_flight", c.max_in_flight);
    if (j.contains("retry")) {
      const auto& r = j.at("retry");
      check_keys(r, {"max_retries", "base_delay_ms"}, "retry");
      get_to(r, "max_retries", c.retry.max_retries);
      if (r.contains("base_delay_ms")) {
        c.retry.base_delay = std::chrono::milliseconds(r.at("base_delay_ms").get<long>());
      }
    }
    get_to(j, "seed", c.seed);
    get_to(j, "workers", c.workers);
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw;
    fail(ErrorCode::Config, e.what());
  }
  validate_config(c);
  return c;
}

PipelineConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Config, "cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, path + ": " + e.what());
  }
  return config_from_json(j, fs::path(path).parent_path().string().empty()
                                 ? "."
                                 : fs::path(path).parent_path().string());
}

void validate_config(const PipelineConfig& c) {
  auto bad = [](const std::string& what) { fail(ErrorCode::Config, what); };
  if (c.concepts.empty()) bad("at least one concept is required");
  std::set<std::string> seen;
  for (const auto& name : c.concepts) {
    if (name.empty()) bad("concept names must be non-empty");
    if (!seen.insert(name).second) bad("duplicate concept '" + name + "'");
  }
  for (const auto& [name, weight] : c.weights) {
    if (!is_component_name(name)) bad("unknown score component '" + name + "' in weights");
    if (!std::isfinite(weight)) bad("weight for '" + name + "' must be finite");
  }
  static const std::set<std::string> kScoreNames = {"s_pos", "s_neg", "s_edit", "s_causal", "combined"};
  if (!kScoreNames.count(c.region_score) && !is_component_name(c.region_score)) {
    bad("unknown region score '" + c.region_score + "'");
  }
  if (c.region_score == "combined" && c.weights.empty()) bad("combined score needs weights");
  if (c.region_k < 1) bad("region.k must be at least 1");
  if (c.k_negatives < 1) bad("k_negatives must be at least 1");
  if (!(c.coverage.tau_pos >= 0.0 && c.coverage.tau_pos <= 1.0)) bad("coverage.tau_pos must lie in [0, 1]");
  if (!(c.coverage.tau_neg >= 0.0 && c.coverage.tau_neg <= 1.0)) bad("coverage.tau_neg must lie in [0, 1]");
  if (!(c.alpha > 0.0 && c.alpha <= 1.0)) bad("alpha must lie in (0, 1]");
  if (!(c.reliability_threshold >= -1.0 && c.reliability_threshold <= 1.0)) {
    bad("reliability.threshold must lie in [-1, 1]");
  }
  if (c.retrieval.stage_one_candidates < 1) bad("retrieval.stage_one_candidates must be positive");
  if (c.retrieval.measured_negatives_per_counter > c.retrieval.stage_one_candidates ||
      c.retrieval.pool_negatives_per_counter > c.retrieval.stage_one_candidates) {
    bad("negatives per counter must not exceed stage_one_candidates");
  }
  if (c.max_in_flight < 1) bad("max_in_flight must be at least 1");
  if (c.workers < 1) bad("workers must be at least 1");
  if (c.retry.max_retries < 0) bad("retry.max_retries must be non-negative");
  if (c.backend.kind == BackendKind::Simulator && c.backend.world.empty()) {
    bad("simulator backend needs backend.world");
  }
  if (c.backend.kind != BackendKind::Simulator && c.backend.voxel_dim < 1) {
    bad("backend.voxel_dim must be positive");
  }
  for (const auto& target : c.concepts) {
    build_generation_plan(target, c.plan);
  }
}

nlohmann::json config_to_json(const PipelineConfig& c) {
  auto plan = plan_to_json(build_generation_plan(c.concepts.front(), c.plan));
  plan.erase("concept");
  nlohmann::json required = nlohmann::json::array();
  for (auto cr : c.required_criteria) required.push_back(to_string(cr));
  return {
      {"concepts", c.concepts},
      {"baselines", c.baselines},
      {"plan", plan},
      {"region", {{"mode", c.region_mode == SelectionMode::TopK ? "top-k" : "positive-causal"},
                  {"k", c.region_k},
                  {"score", c.region_score}}},
      {"weights", c.weights},
      {"standardize_components", c.standardize_components},
      {"k_negatives", c.k_negatives},
      {"coverage", {{"tau_pos", c.coverage.tau_pos}, {"tau_neg", c.coverage.tau_neg}}},
      {"alpha", c.alpha},
      {"required_criteria", required},
      {"evidence", {{"min_gen_causal", c.evidence.min_gen_causal},
                    {"min_meas_causal", c.evidence.min_meas_causal}}},
      {"reliability", {{"enabled", c.reliability_filter}, {"threshold", c.reliability_threshold}}},
      {"normalization", c.normalization == NormalizationMode::Own ? "own" : "none"},
      {"retrieval", {{"stage_one_candidates", c.retrieval.stage_one_candidates},
                     {"measured_positives", c.retrieval.measured_positives},
                     {"measured_negatives_per_counter", c.retrieval.measured_negatives_per_counter},
                     {"pool_positives", c.retrieval.pool_positives},
                     {"pool_negatives_per_counter", c.retrieval.pool_negatives_per_counter}}},
      {"followup", {{"max_proposals", c.followup.max_proposals}}},
      {"backend", {{"kind", to_string(c.backend.kind)},
                   {"world", fs::path(c.backend.world).filename().string()},
                   {"endpoint", c.backend.endpoint},
                   {"voxel_dim", c.backend.voxel_dim}}},
      {"max_in_flight", c.max_in_flight},
      {"retry", {{"max_retries", c.retry.max_retries},
                 {"base_delay_ms", c.retry.base_delay.count()}}},
      {"seed", c.seed},
  };
}

std::string config_fingerprint(const PipelineConfig& c) {
  return hex64(fnv1a64(config_to_json(c).dump()));
}

std::string concept_slug(const std::string& concept_name) {
  std::string out;
  for (unsigned char ch : concept_name) {
    out += std::isalnum(ch) ? static_cast<char>(std::tolower(ch)) : '_';
  }
  return out.empty() ? "_" : out;
}

std::string score_map_csv(const VoxelScoreTable& t, const std::string& which) {
  const auto& col = t.column(which);
  std::vector<std::size_t> order(t.voxel_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return t.voxel_ids[a] < t.voxel_ids[b]; });
  std::string out = "voxel_id," + which + "\n";
  for (auto i : order) out += csv::join_row({t.voxel_ids[i], csv::format_double(col[i])}) + "\n";
  return out;
}

void export_score_map(const VoxelScoreTable& t, const std::string& which, const std::string& path) {
  csv::write_file(path, score_map_csv(t, which));
}

std::pair<std::vector<std::string>, ScoreVector> read_score_map(const std::string& path) {
  auto rows = csv::read_file(path);
  if (rows.empty() || rows.front().size() != 2 || rows.front()[0] != "voxel_id") {
    fail(ErrorCode::Parse, "score map must start with voxel_id,<score>");
  }
  std::pair<std::vector<std::string>, ScoreVector> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 2) fail(ErrorCode::Parse, "bad score map row " + std::to_string(i));
    out.first.push_back(rows[i][0]);
    out.second.push_back(std::stod(rows[i][1]));
  }
  return out;
}

ScoringInputs manifest_scoring_inputs(const StimulusManifest& m, Split split, std::size_t k,
                                      const std::vector<std::string>& available,
                                      bool require_verified_positive) {
  std::unordered_set<std::string> ids(available.begin(), available.end());
  ScoringInputs in;
  in.k = k;
  std::unordered_set<std::string> positives;
  for (const auto& img : m.images) {
    if (img.split != split || !ids.count(img.id)) continue;
    if (img.role == Role::Positive && (!require_verified_positive || img.verified_present == true)) {
      in.positives.push_back(img.id);
      positives.insert(img.id);
    } else if (img.role == Role::SemanticNegative && img.verified_absent == true) {
      in.negatives.push_back(img.id);
    }
  }
  for (const auto& img : m.images) {
    if (img.role != Role::CounterfactualEdit || img.split != split) continue;
    if (img.verified_absent != true || !ids.count(img.id) || !img.parent_positive_id) continue;
    if (!positives.count(*img.parent_positive_id)) continue;
    in.edits[*img.parent_positive_id].push_back(img.id);
  }
  for (const auto& id : in.positives) in.edits.try_emplace(id);
  return in;
}

// --- execution ---------------------------------------------------------------

namespace {

struct Backend {
  std::unique_ptr<ModelClient> client;
  std::shared_ptr<const sim::SyntheticWorld> world;
  std::size_t voxel_dim = 0;
  std::vector<std::string> voxel_ids;         // encoder output order
  std::vector<std::string> kept_voxels;       // after reliability filtering
  std::optional<ReliabilityMask> mask;
  std::optional<EmbeddingIndex> measured_index;
  std::optional<ResponseMatrix> measured_norm;       // kept voxels, z-scored
  std::optional<ResponseMatrix> predicted_measured;  // raw, encoder voxel order
  std::optional<EmbeddingIndex> pool_index;
};

std::string voxel_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "v%05zu", i);
  return buf;
}

ResponseMatrix load_matrix_input(const std::string& path) {
  if (!fs::exists(path)) fail(ErrorCode::Io, "missing input file: " + path);
  return read_matrix(path);
}

EmbeddingIndex load_index_input(const std::string& path) {
  if (!fs::exists(path)) fail(ErrorCode::Io, "missing input file: " + path);
  return read_index(path);
}

Backend make_backend(const PipelineConfig& c) {
  Backend b;
  switch (c.backend.kind) {
    case BackendKind::Simulator: {
      if (!fs::exists(c.backend.world)) fail(ErrorCode::Io, "missing input file: " + c.backend.world);
      b.world = sim::build_world(sim::read_world_spec(c.backend.world), c.seed);
      for (const auto& name : c.concepts) {
        if (!b.world->has_concept(name)) {
          fail(ErrorCode::Config, "concept '" + name + "' is not part of the simulated world");
        }
      }
      b.client = std::make_unique<sim::SimulatorClient>(b.world);
      b.voxel_ids = b.world->voxel_ids();
      if (!b.world->measured_pool().ids.empty()) {
        b.measured_index = b.world->measured_index();
        auto measured = b.world->measured_responses();
        b.measured_norm = measured;
      }
      if (!b.world->image_pool().ids.empty()) b.pool_index = b.world->image_pool_index();
      break;
    }
    case BackendKind::Stub: {
      StubOptions opt;
      opt.seed = c.seed;
      opt.voxel_dim = c.backend.voxel_dim;
      b.client = std::make_unique<StubClient>(opt);
      break;
    }
    case BackendKind::Http: {
      std::string endpoint = c.backend.endpoint;
      if (const char* env = std::getenv("CAUSELOC_ENDPOINT"); env && *env) endpoint = env;
      if (endpoint.empty()) fail(ErrorCode::Config, "http backend needs an endpoint");
      b.client = std::make_unique<HttpClient>(endpoint);
      break;
    }
  }
  if (c.backend.kind != BackendKind::Simulator) {
    for (std::size_t i = 0; i < c.backend.voxel_dim; ++i) b.voxel_ids.push_back(voxel_name(i));
    if (!c.backend.measured_index.empty()) b.measured_index = load_index_input(c.backend.measured_index);
    if (!c.backend.measured_responses.empty()) {
      b.measured_norm = load_matrix_input(c.backend.measured_responses);
    }
    if (!c.backend.predicted_measured.empty()) {
      b.predicted_measured = load_matrix_input(c.backend.predicted_measured);
    }
    if (!c.backend.pool_index.empty()) b.pool_index = load_index_input(c.backend.pool_index);
    if (b.measured_index && !b.measured_norm) {
      fail(ErrorCode::Config, "measured_index given without measured_responses");
    }
  }
  b.voxel_dim = b.voxel_ids.size();

  if (b.measured_norm) {
    auto& measured = *b.measured_norm;
    if (measured.voxel_ids != b.voxel_ids) {
      fail(ErrorCode::Config, "measured responses do not match the encoder voxel ids");
    }
    if (!b.predicted_measured) {
      ResponseMatrix pred(measured.image_ids, b.voxel_ids, Provenance::Predicted);
      parallel_for(measured.n_images(), c.max_in_flight, [&](std::size_t i) {
        auto v = encode(measured.image_ids[i], b.voxel_dim, *b.client, c.retry);
        std::copy(v.begin(), v.end(), pred.row(i).begin());
      });
      b.predicted_measured = std::move(pred);
    } else {
      b.predicted_measured = select_images(*b.predicted_measured, measured.image_ids);
    }
    b.kept_voxels = b.voxel_ids;
    if (c.reliability_filter) {
      b.mask = filter_voxels_by_reliability(*b.predicted_measured, measured, c.reliability_threshold);
      b.kept_voxels.clear();
      for (std::size_t v = 0; v < b.voxel_ids.size(); ++v) {
        if (b.mask->keep[v]) b.kept_voxels.push_back(b.voxel_ids[v]);
      }
      if (b.kept_voxels.empty()) fail(ErrorCode::Config, "reliability filter removed every voxel");
    }
    std::vector<std::size_t> cols;
    auto pos = index_of(b.voxel_ids);
    for (const auto& id : b.kept_voxels) cols.push_back(pos.at(id));
    auto normalized = zscore_normalize(select_voxels(measured, cols));
    b.measured_norm = std::move(normalized.matrix);
  } else {
    b.kept_voxels = b.voxel_ids;
  }
  return b;
}

struct Assembled {
  std::string concept_name;
  bool ok = false;
  std::string error;
  GenerationPlan plan;
  StimulusManifest generated;
  StimulusManifest measured;
  StimulusManifest pool;
  ResponseMatrix predicted;  // generated + pool + measured rows, kept voxels
  CoverageReport coverage;
  std::vector<std::string> degraded;
  std::vector<std::string> notes;
};

std::string padded(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04zu", i);
  return buf;
}

std::string image_ref(const StimulusImage& img) {
  auto it = img.extra.find("image_ref");
  return it == img.extra.end() ? img.id : it->get<std::string>();
}

class ConceptAssembler {
 public:
  ConceptAssembler(const PipelineConfig& c, Backend& b, const std::string& name)
      : cfg_(c), backend_(b), client_(*b.client) {
    out_.concept_name = name;
  }

  Assembled run() {
    out_.plan = build_generation_plan(out_.concept_name, cfg_.plan);
    generate();
    retrieve_measured();
    retrieve_pool();
    encode_all();
    out_.ok = true;
    return std::move(out_);
  }

 private:
  void degrade(const std::string& what) {
    std::lock_guard lock(mutex_);
    out_.degraded.push_back(what);
  }

  // Generates one image per slot; failed slots come back empty.
  std::vector<std::string> generate_many(const std::vector<std::string>& prompts,
                                         const std::vector<GenerationContext>& ctx) {
    std::vector<std::string> refs(prompts.size());
    parallel_for(prompts.size(), cfg_.max_in_flight, [&](std::size_t i) {
      try {
        refs[i] = generate_image(prompts[i], ctx[i], client_, cfg_.retry);
      } catch (const Error& e) {
        degrade("generate " + ctx[i].item_key + ": " + e.what());
      }
    });
    return refs;
  }

  void verify_images(std::vector<StimulusImage>& images, std::size_t from) {
    parallel_for(images.size() - from, cfg_.max_in_flight, [&](std::size_t k) {
      auto& img = images[from + k];
      auto outcome = verify(image_ref(img), out_.concept_name, client_, cfg_.retry);
      if (outcome == VerifyOutcome::Unverified) degrade("verify " + img.id + ": unverified");
      if (img.role == Role::Positive) {
        img.verified_present = outcome == VerifyOutcome::Present;
      } else {
        img.verified_absent = outcome == VerifyOutcome::Absent;
      }
    });
  }

  void generate() {
    const auto& plan = out_.plan;
    const auto& name = out_.concept_name;
    auto& m = out_.generated;
    m.concept_name = name;

    std::size_t n_pos = plan.n_pos_train + plan.n_pos_eval;
    if (n_pos > 0) {
      auto prompts = propose_prompts(name, PromptKind::Positive, n_pos, client_, cfg_.retry).prompts;
      std::vector<GenerationContext> ctx(n_pos);
      std::vector<StimulusImage> imgs(n_pos);
      for (std::size_t i = 0; i < n_pos; ++i) {
        bool train = i < plan.n_pos_train;
        auto& img = imgs[i];
        img.id = name + "/pos/" + (train ? "train/" : "eval/") +
                 padded(train ? i : i - plan.n_pos_train);
        img.role = Role::Positive;
        img.split = train ? Split::Train : Split::Eval;
        img.concept_name = name;
        img.prompt_or_instruction = prompts[i];
        ctx[i] = {name, "Positive", "", img.id};
      }
      auto refs = generate_many(prompts, ctx);
      add_generated(imgs, refs);
    }

    if (plan.n_counter_concepts > 0) {
      auto proposal = propose_prompts(name, PromptKind::CounterConcept, plan.n_counter_concepts,
                                      client_, cfg_.retry);
      m.counter_concepts = proposal.prompts;
      for (const auto& d : proposal.dropped) {
        out_.notes.push_back("dropped counter concept mentioning target: " + d);
      }
    }
    for (const auto& counter : m.counter_concepts) {
      std::size_t n = 2 * plan.n_prompts_per_counter;
      if (n == 0) break;
      auto proposal = propose_prompts(name, PromptKind::NegativePrompt, n, client_, cfg_.retry, counter);
      for (const auto& d : proposal.dropped) {
        out_.notes.push_back("dropped negative prompt mentioning target: " + d);
      }
      std::vector<GenerationContext> ctx(n);
      std::vector<StimulusImage> imgs(n);
      for (std::size_t i = 0; i < n; ++i) {
        bool train = i < plan.n_prompts_per_counter;
        auto& img = imgs[i];
        img.id = name + "/neg/" + counter + "/" + (train ? "train/" : "eval/") +
                 padded(train ? i : i - plan.n_prompts_per_counter);
        img.role = Role::SemanticNegative;
        img.split = train ? Split::Train : Split::Eval;
        img.concept_name = name;
        img.counter_concept = counter;
        img.prompt_or_instruction = proposal.prompts[i];
        ctx[i] = {name, "SemanticNegative", counter, img.id};
      }
      auto refs = generate_many(proposal.prompts, ctx);
      add_generated(imgs, refs);
    }

    // Edit parents: the first verified positives of each split.
    std::vector<const StimulusImage*> parents;
    for (Split split : {Split::Train, Split::Eval}) {
      std::size_t want = split == Split::Train ? plan.n_edit_parents_train : plan.n_edit_parents_eval;
      for (const auto& img : m.images) {
        if (want == 0) break;
        if (img.role == Role::Positive && img.split == split && img.verified_present == true) {
          parents.push_back(&img);
          --want;
        }
      }
      if (want > 0) {
        out_.notes.push_back(std::string("fewer verified positives than edit parents (") +
                             to_string(split) + ")");
      }
    }
    std::vector<StimulusImage> edits;
    std::vector<std::pair<std::string, std::string>> jobs;  // parent ref, instruction
    for (const auto* parent : parents) {
      if (plan.n_edits_per_parent == 0) break;
      auto instructions = propose_prompts(name, PromptKind::EditInstruction, plan.n_edits_per_parent,
                                          client_, cfg_.retry, image_ref(*parent));
      for (std::size_t e = 0; e < instructions.prompts.size(); ++e) {
        StimulusImage img;
        char suffix[16];
        std::snprintf(suffix, sizeof(suffix), "/edit/%02zu", e);
        img.id = parent->id + suffix;
        img.role = Role::CounterfactualEdit;
        img.split = parent->split;
        img.concept_name = name;
        img.parent_positive_id = parent->id;
        img.prompt_or_instruction = instructions.prompts[e];
        edits.push_back(img);
        jobs.emplace_back(image_ref(*parent), instructions.prompts[e]);
      }
    }
    std::vector<std::string> refs(edits.size());
    parallel_for(edits.size(), cfg_.max_in_flight, [&](std::size_t i) {
      try {
        refs[i] = edit_image(jobs[i].first, jobs[i].second, name, edits[i].id, client_, cfg_.retry);
      } catch (const Error& e) {
        degrade("edit " + edits[i].id + ": " + e.what());
      }
    });
    add_generated(edits, refs);
  }

  void add_generated(std::vector<StimulusImage>& imgs, const std::vector<std::string>& refs) {
    std::vector<StimulusImage> kept;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      if (refs[i].empty()) continue;
      imgs[i].source = Source::Generated;
      imgs[i].extra["image_ref"] = refs[i];
      kept.push_back(std::move(imgs[i]));
    }
    auto& all = out_.generated.images;
    std::size_t from = all.size();
    all.insert(all.end(), kept.begin(), kept.end());
    verify_images(all, from);
  }

  // Retrieved images alternate Train/Eval by rank; an image claimed by an
  // earlier query is not added again.
  void add_retrieved(StimulusManifest& m, std::unordered_set<std::string>& seen,
                     const RetrievalResult& r, Role role, Source source,
                     const std::string& counter) {
    for (std::size_t i = 0; i < r.ranked_ids.size(); ++i) {
      const auto& id = r.ranked_ids[i];
      if (!seen.insert(id).second) continue;
      StimulusImage img;
      img.id = id;
      img.role = role;
      img.split = i % 2 == 0 ? Split::Train : Split::Eval;
      img.source = source;
      img.concept_name = out_.concept_name;
      bool pass = i < r.verification.size() && r.verification[i] == true;
      if (i < r.verification.size() && !r.verification[i]) img.extra["verification"] = "unverified";
      if (role == Role::Positive) {
        img.verified_present = pass;
      } else {
        img.counter_concept = counter;
        img.verified_absent = pass;
      }
      img.extra["similarity"] = r.similarities[i];
      m.images.push_back(std::move(img));
    }
  }

  void retrieve_from(const EmbeddingIndex& index, StimulusManifest& m, Source source,
                     std::size_t n_pos, std::size_t n_neg) {
    const auto& name = out_.concept_name;
    m.concept_name = name;
    m.counter_concepts = out_.generated.counter_concepts;
    std::unordered_set<std::string> seen;
    auto target_vec = embed(name, false, client_, cfg_.retry);
    if (n_pos > 0) {
      auto r = rank_by_similarity(target_vec, index, n_pos, name);
      r = verify_batch(std::move(r), name, {VerifyMode::RequirePresent, ""}, client_,
                       cfg_.max_in_flight, cfg_.retry);
      add_retrieved(m, seen, r, Role::Positive, source, "");
    }
    if (n_neg == 0) return;
    for (const auto& counter : m.counter_concepts) {
      auto counter_vec = embed(counter, false, client_, cfg_.retry);
      auto r = two_stage_negative_retrieval(counter_vec, target_vec, index,
                                            cfg_.retrieval.stage_one_candidates,
                                            std::min(n_neg, cfg_.retrieval.stage_one_candidates),
                                            counter);
      r = verify_batch(std::move(r), name, {VerifyMode::Double, counter}, client_,
                       cfg_.max_in_flight, cfg_.retry);
      add_retrieved(m, seen, r, Role::SemanticNegative, source, counter);
    }
  }

  void retrieve_measured() {
    RequestedCounts requested;
    requested.n_pos = cfg_.retrieval.measured_positives;
    for (const auto& c : out_.generated.counter_concepts) {
      requested.n_neg_per_counter[c] = cfg_.retrieval.measured_negatives_per_counter;
    }
    out_.measured.concept_name = out_.concept_name;
    out_.measured.counter_concepts = out_.generated.counter_concepts;
    if (backend_.measured_index) {
      retrieve_from(*backend_.measured_index, out_.measured, Source::RetrievedMeasured,
                    cfg_.retrieval.measured_positives, cfg_.retrieval.measured_negatives_per_counter);
    } else {
      out_.notes.push_back("no measured dataset: measured evaluation unavailable");
    }
    out_.coverage = coverage_report(out_.concept_name, out_.measured, requested, cfg_.coverage,
                                    Source::RetrievedMeasured);
  }

  void retrieve_pool() {
    out_.pool.concept_name = out_.concept_name;
    out_.pool.counter_concepts = out_.generated.counter_concepts;
    if (!backend_.pool_index) return;
    retrieve_from(*backend_.pool_index, out_.pool, Source::RetrievedPool,
                  cfg_.retrieval.pool_positives, cfg_.retrieval.pool_negatives_per_counter);
  }

  void encode_all() {
    // Generated and pool images are encoded; measured images reuse the
    // backend's predictions.
    std::vector<const StimulusImage*> to_encode;
    for (const auto* m : {&out_.generated, &out_.pool}) {
      for (const auto& img : m->images) {
        bool usable = img.role == Role::Positive || img.verified_absent == true;
        if (m == &out_.generated && img.role == Role::Positive && img.verified_present != true) {
          usable = false;
        }
        if (usable) to_encode.push_back(&img);
      }
    }
    std::vector<std::vector<float>> rows(to_encode.size());
    parallel_for(to_encode.size(), cfg_.max_in_flight, [&](std::size_t i) {
      try {
        rows[i] = encode(image_ref(*to_encode[i]), backend_.voxel_dim, client_, cfg_.retry);
      } catch (const Error& e) {
        degrade("encode " + to_encode[i]->id + ": " + e.what());
      }
    });
    std::vector<std::string> ids;
    std::vector<float> values;
    for (std::size_t i = 0; i < to_encode.size(); ++i) {
      if (rows[i].empty()) continue;
      ids.push_back(to_encode[i]->id);
      values.insert(values.end(), rows[i].begin(), rows[i].end());
    }
    ResponseMatrix predicted;
    predicted.image_ids = std::move(ids);
    predicted.voxel_ids = backend_.voxel_ids;
    predicted.values = std::move(values);
    predicted.provenance = Provenance::Predicted;

    if (backend_.predicted_measured && !out_.measured.images.empty()) {
      std::vector<std::string> measured_ids;
      for (const auto& img : out_.measured.images) measured_ids.push_back(img.id);
      auto rows_m = select_images(*backend_.predicted_measured, measured_ids);
      predicted = concat_images({&predicted, &rows_m});
    }
    std::vector<std::size_t> cols;
    auto pos = index_of(predicted.voxel_ids);
    for (const auto& id : backend_.kept_voxels) cols.push_back(pos.at(id));
    predicted = select_voxels(predicted, cols);
    if (cfg_.normalization == NormalizationMode::Own) {
      auto normalized = zscore_normalize(predicted);
      if (!normalized.stats.dead_voxel_ids.empty()) {
        out_.notes.push_back(std::to_string(normalized.stats.dead_voxel_ids.size()) +
                             " dead voxels dropped during normalization");
      }
      predicted = std::move(normalized.matrix);
    }
    out_.predicted = std::move(predicted);
  }

  const PipelineConfig& cfg_;
  Backend& backend_;
  ModelClient& client_;
  Assembled out_;
  std::mutex mutex_;
};

ScoringInputs usable_inputs(const StimulusManifest& m, Split split, std::size_t k,
                            const std::vector<std::string>& available,
                            bool require_verified_positive = true) {
  return manifest_scoring_inputs(m, split, k, available, require_verified_positive);
}

std::unordered_set<std::string> id_set(const std::vector<std::string>& ids) {
  return {ids.begin(), ids.end()};
}

std::optional<RegionScoreSet> try_region_scores(const ResponseMatrix& m, const ScoringInputs& in,
                                                const std::vector<std::string>& region) {
  if (in.positives.empty() || region.empty()) return std::nullopt;
  auto voxels = id_set(m.voxel_ids);
  std::vector<std::string> present;
  for (const auto& v : region) {
    if (voxels.count(v)) present.push_back(v);
  }
  if (present.empty()) return std::nullopt;
  return region_scores(m, in, present);
}

struct EvalBundle {
  std::optional<RegionScoreSet> gen_eval;
  std::optional<RegionScoreSet> meas_eval;
};

EvalBundle evaluate_region(const Assembled& a, const Backend& b, const PipelineConfig& c,
                           const std::vector<std::string>& region) {
  EvalBundle e;
  const auto& available = a.predicted.image_ids;
  e.gen_eval = try_region_scores(a.predicted, usable_inputs(a.generated, Split::Eval, c.k_negatives, available),
                                 region);
  if (b.measured_norm) {
    const auto& measured_ids = b.measured_norm->image_ids;
    e.meas_eval = try_region_scores(
        *b.measured_norm, usable_inputs(a.measured, Split::Eval, c.k_negatives, measured_ids), region);
  }
  return e;
}

std::optional<double> criterion_score(const EvalBundle& e, Criterion c) {
  switch (c) {
    case Criterion::ActivationGen:
      return e.gen_eval ? std::optional<double>(e.gen_eval->s_pos) : std::nullopt;
    case Criterion::CausalGen: return e.gen_eval ? e.gen_eval->s_neg : std::nullopt;
    case Criterion::CausalEdits: return e.gen_eval ? e.gen_eval->s_edit : std::nullopt;
    case Criterion::ActivationMeas:
      return e.meas_eval ? std::optional<double>(e.meas_eval->s_pos) : std::nullopt;
    case Criterion::CausalMeas: return e.meas_eval ? e.meas_eval->s_neg : std::nullopt;
  }
  return std::nullopt;
}

struct Outputs {
  fs::path dir;
  void write(const std::string& name, const std::string& contents) const {
    csv::write_file((dir / name).string(), contents);
  }
};

ConceptReport analyze_concept(const PipelineConfig& c, const Backend& b, const Assembled& a,
                              const std::map<std::string, const Assembled*>& assembled,
                              const std::string& fingerprint, const nlohmann::json& config_block,
                              const Outputs& out) {
  ConceptReport report;
  report.concept_name = a.concept_name;
  report.degraded = a.degraded;
  Verdict& v = report.verdict;
  v.concept_name = a.concept_name;
  v.notes = a.notes;
  v.coverage = a.coverage;
  v.coverage_level = a.coverage.level;

  const auto& available = a.predicted.image_ids;
  auto gen_train = usable_inputs(a.generated, Split::Train, c.k_negatives, available);
  auto table = score_voxels(a.predicted, gen_train);
  table.components["MAG"] = table.s_pos;
  if (!table.s_neg.empty()) table.components["CSG"] = table.s_neg;
  if (!table.s_edit.empty()) table.components["CEG"] = table.s_edit;

  auto add_source = [&](const StimulusManifest& m, const char* pos_name, const char* neg_name,
                        const char* unfiltered_name) {
    auto in = usable_inputs(m, Split::Train, c.k_negatives, available);
    if (!in.positives.empty()) {
      table.components[pos_name] = positive_score(a.predicted, in.positives);
      if (!in.negatives.empty()) {
        table.components[neg_name] =
            semantic_negative_score(a.predicted, in.positives, in.negatives, c.k_negatives);
      }
    }
    if (unfiltered_name) {
      auto all = usable_inputs(m, Split::Train, c.k_negatives, available, false);
      if (!all.positives.empty()) {
        table.components[unfiltered_name] = positive_score(a.predicted, all.positives);
      }
    }
  };
  add_source(a.measured, "MAM", "CSM", nullptr);
  add_source(a.pool, "MALF", "CSL", "MAL");

  ComponentWeights weights;
  for (const auto& [name, w] : c.weights) {
    if (table.components.count(name)) {
      weights[name] = w;
    } else {
      v.notes.push_back("ranking component " + name + " unavailable; left out of the combination");
    }
  }
  if (!weights.empty()) {
    table.components["combined"] = combined_ranking_score(
        [&] {
          ComponentScores comps;
          for (const auto& [name, _] : weights) comps[name] = table.components.at(name);
          return comps;
        }(),
        weights, c.standardize_components);
  }

  Region region;
  if (c.region_mode == SelectionMode::PositiveCausal) {
    region = select_region_positive_causal(table, a.concept_name);
  } else {
    if (!table.has(c.region_score)) {
      fail(ErrorCode::InvalidArgument, "region score '" + c.region_score + "' unavailable");
    }
    region = select_region_top_k(table, c.region_score, c.region_k, a.concept_name);
    if (region.short_region) v.notes.push_back("fewer voxels than requested region size");
  }
  v.region_size = region.voxel_ids.size();

  out.write("scores.csv", score_table_to_csv(table));
  out.write("scores.bcrm", encode_matrix(score_table_to_matrix(table)));
  if (table.has("s_causal")) out.write("score_map_s_causal.csv", score_map_csv(table, "s_causal"));
  out.write("region.csv", region_to_csv(region));

  if (region.empty()) {
    v.notes.push_back("no voxel has a positive causal score");
    v.causal_evidence = CausalEvidence::Weak;
    v.decision = Decision::Rejected;
  } else {
    v.train_scores = region_scores(a.predicted, gen_train, region.voxel_ids);
    auto target = evaluate_region(a, b, c, region.voxel_ids);
    v.gen_eval_scores = target.gen_eval;
    v.meas_eval_scores = target.meas_eval;

    std::vector<std::string> baseline_names;
    if (auto it = c.baselines.find(a.concept_name); it != c.baselines.end()) {
      baseline_names = it->second;
    } else {
      for (const auto& other : c.concepts) {
        if (other != a.concept_name) baseline_names.push_back(other);
      }
    }
    std::map<Criterion, std::vector<double>> baseline_scores;
    for (const auto& name : baseline_names) {
      auto it = assembled.find(name);
      if (it == assembled.end() || !it->second->ok) {
        v.notes.push_back("baseline '" + name + "' unavailable");
        continue;
      }
      auto e = evaluate_region(*it->second, b, c, region.voxel_ids);
      for (auto cr : all_criteria()) {
        if (auto s = criterion_score(e, cr)) baseline_scores[cr].push_back(*s);
      }
    }
    for (auto cr : all_criteria()) {
      if (auto s = criterion_score(target, cr)) {
        v.significance.push_back(significance_test(cr, *s, baseline_scores[cr], c.alpha));
      }
    }
    GateDecision gate;
    try {
      gate = significance_gate(v.significance, c.alpha, c.required_criteria);
    } catch (const Error& e) {
      gate.passed = false;
      gate.alpha = c.alpha;
      gate.required.assign(c.required_criteria.begin(), c.required_criteria.end());
      v.notes.push_back(e.what());
    }
    v.gate = gate;
    if (!target.gen_eval || !target.gen_eval->s_causal) {
      v.notes.push_back("generated-eval causal score unavailable");
      v.causal_evidence = CausalEvidence::Weak;
    } else {
      EvidenceInputs ev;
      ev.gen_eval_causal = target.gen_eval->s_causal;
      if (target.meas_eval) ev.meas_eval_causal = target.meas_eval->s_causal;
      ev.gate = gate;
      ev.coverage = a.coverage.level;
      v.causal_evidence = assess_causal_evidence(ev, c.evidence);
    }
    v.decision = decide(v.causal_evidence, v.coverage_level);
  }
  v.followup = propose_followup(a.coverage, a.plan, c.followup);

  nlohmann::json rs = {{"config_hash", fingerprint}, {"region_size", v.region_size}};
  if (v.train_scores) rs["train"] = region_scores_to_json(*v.train_scores);
  if (v.gen_eval_scores) rs["generated_eval"] = region_scores_to_json(*v.gen_eval_scores);
  if (v.meas_eval_scores) rs["measured_eval"] = region_scores_to_json(*v.meas_eval_scores);
  out.write("region_scores.json", rs.dump(2) + "\n");

  std::string pvalues = significance_csv_header();
  for (const auto& s : v.significance) pvalues += significance_csv_row(a.concept_name, s);
  out.write("pvalues.csv", pvalues);

  auto cov = coverage_to_json(a.coverage);
  cov["config_hash"] = fingerprint;
  out.write("coverage.json", cov.dump(2) + "\n");
  out.write("followup.csv", followup_to_csv(*v.followup));
  out.write("verdict.txt", "config_hash: " + fingerprint + "\n" +
                               render_verdict_text(v, config_block));
  report.ok = true;
  return report;
}

void write_assembled(const Assembled& a, const Outputs& out) {
  out.write("plan.json", plan_to_json(a.plan).dump(2) + "\n");
  out.write("manifest.jsonl", manifest_to_jsonl(a.generated));
  out.write("measured_manifest.jsonl", manifest_to_jsonl(a.measured));
  if (!a.pool.images.empty()) out.write("pool_manifest.jsonl", manifest_to_jsonl(a.pool));
  out.write("predicted.bcrm", encode_matrix(a.predicted));
  if (!a.degraded.empty()) {
    std::string text;
    for (const auto& d : a.degraded) text += d + "\n";
    out.write("degraded.txt", text);
  }
}

std::string utc_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config) {
  PipelineResult result;
  const std::string started = utc_now();
  Backend backend;
  try {
    validate_config(config);
    backend = make_backend(config);
  } catch (const Error& e) {
    result.exit_code = 1;
    result.fatal_error = e.what();
    return result;
  }

  const std::string fingerprint = config_fingerprint(config);
  nlohmann::json config_block = config_to_json(config);
  fs::path root(config.output_dir);
  fs::create_directories(root);

  // Targets plus any extra baseline concepts, in first-mention order.
  std::vector<std::string> needed = config.concepts;
  for (const auto& target : config.concepts) {
    auto it = config.baselines.find(target);
    if (it == config.baselines.end()) continue;
    for (const auto& name : it->second) {
      if (std::find(needed.begin(), needed.end(), name) == needed.end()) needed.push_back(name);
    }
  }
  if (backend.world) {
    needed.erase(std::remove_if(needed.begin(), needed.end(),
                                [&](const std::string& n) { return !backend.world->has_concept(n); }),
                 needed.end());
  }

  std::vector<Assembled> assembled(needed.size());
  parallel_for(needed.size(), config.workers, [&](std::size_t i) {
    try {
      assembled[i] = ConceptAssembler(config, backend, needed[i]).run();
    } catch (const std::exception& e) {
      assembled[i].concept_name = needed[i];
      assembled[i].ok = false;
      assembled[i].error = e.what();
    }
  });
  std::map<std::string, const Assembled*> by_name;
  for (const auto& a : assembled) by_name[a.concept_name] = &a;

  result.reports.resize(config.concepts.size());
  parallel_for(config.concepts.size(), config.workers, [&](std::size_t i) {
    const auto& name = config.concepts[i];
    Outputs out{root / concept_slug(name)};
    auto& report = result.reports[i];
    report.concept_name = name;
    try {
      fs::create_directories(out.dir);
      const Assembled& a = *by_name.at(name);
      if (!a.ok) fail(ErrorCode::InvalidArgument, a.error);
      write_assembled(a, out);
      report = analyze_concept(config, backend, a, by_name, fingerprint, config_block, out);
    } catch (const std::exception& e) {
      report.ok = false;
      report.error = e.what();
      csv::write_file((out.dir / "error.txt").string(), std::string(e.what()) + "\n");
    }
  });

  std::string summary = "config_hash," + verdict_csv_header();
  bool partial = false;
  for (const auto& r : result.reports) {
    if (r.ok) {
      summary += fingerprint + "," + verdict_csv_row(r.verdict);
    } else {
      summary += csv::join_row({fingerprint, r.concept_name, "Error"}) + "\n";
    }
    partial = partial || !r.ok || !r.degraded.empty();
  }
  csv::write_file((root / "summary.csv").string(), summary);
  nlohmann::json cfg_out = {{"config_hash", fingerprint}, {"config", config_block}};
  csv::write_file((root / "config.json").string(), cfg_out.dump(2) + "\n");
  if (backend.mask) {
    std::string rel = "voxel_id,correlation,kept\n";
    for (std::size_t v = 0; v < backend.voxel_ids.size(); ++v) {
      rel += csv::join_row({backend.voxel_ids[v], csv::format_double(backend.mask->correlation[v]),
                            backend.mask->keep[v] ? "true" : "false"}) +
             "\n";
    }
    csv::write_file((root / "reliability.csv").string(), rel);
  }
  nlohmann::json meta = {{"started_utc", started},
                         {"finished_utc", utc_now()},
                         {"workers", config.workers},
                         {"output_dir", config.output_dir},
                         {"config_hash", fingerprint}};
  csv::write_file((root / "metadata.json").string(), meta.dump(2) + "\n");
  result.exit_code = partial ? 2 : 0;
  return result;
}

}  // namespace causeloc
