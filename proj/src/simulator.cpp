#include "causeloc/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "causeloc/csv.hpp"
#include "causeloc/error.hpp"
#include "causeloc/parallel.hpp"
#include "causeloc/region.hpp"
#include "causeloc/rng.hpp"
#include "causeloc/scoring.hpp"

namespace causeloc::sim {

const char* to_string(VoxelType t) {
  switch (t) {
    case VoxelType::ConceptSelective: return "ConceptSelective";
    case VoxelType::ConfoundDriven: return "ConfoundDriven";
    case VoxelType::Noise: return "Noise";
  }
  return "?";
}

namespace {

void check_probability(double p, const std::string& what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    fail(ErrorCode::Config, "probability " + what + " must lie in [0, 1]");
  }
}

void check_name(const std::string& name) {
  if (name.empty() || name.find_first_of("|?") != std::string::npos) {
    fail(ErrorCode::Config, "invalid flag name '" + name + "'");
  }
}

std::string padded(std::size_t i, int width = 4) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*zu", width, i);
  return buf;
}

bool contains(const Descriptor& d, const std::string& flag) {
  return std::binary_search(d.begin(), d.end(), flag);
}

Descriptor parse_flags(const std::string& ref) {
  auto pos = ref.find("?flags=");
  if (pos == std::string::npos) fail(ErrorCode::InvalidArgument, "unknown image ref '" + ref + "'");
  Descriptor d;
  std::string rest = ref.substr(pos + 7);
  std::size_t start = 0;
  while (start < rest.size()) {
    auto bar = rest.find('|', start);
    if (bar == std::string::npos) bar = rest.size();
    if (bar > start) d.push_back(rest.substr(start, bar - start));
    start = bar + 1;
  }
  std::sort(d.begin(), d.end());
  return d;
}

std::string make_ref(const std::string& key, const Descriptor& d) {
  std::string ref = "sim://" + key + "?flags=";
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) ref += '|';
    ref += d[i];
  }
  return ref;
}

std::vector<float> gaussian_unit(std::uint64_t seed, const std::string& key, std::size_t dim) {
  auto rng = Rng::stream(seed, key);
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  normalize_unit(v);
  return v;
}

}  // namespace

WorldSpec world_spec_from_json(const nlohmann::json& j) {
  try {
    WorldSpec s;
    for (const auto& c : j.at("concepts")) {
      ConceptSpec cs;
      cs.name = c.at("name").get<std::string>();
      cs.selective_voxels = c.value("selective_voxels", std::size_t{0});
      cs.selective_gain = c.value("selective_gain", 1.0);
      cs.cooccurrence = c.value("cooccurrence", std::map<std::string, double>{});
      cs.counter_concepts = c.value("counter_concepts", std::vector<std::string>{});
      cs.measured_rate = c.value("measured_rate", 0.05);
      s.concepts.push_back(std::move(cs));
    }
    for (const auto& a : j.value("attributes", nlohmann::json::array())) {
      AttributeSpec as;
      as.name = a.at("name").get<std::string>();
      as.voxels = a.value("voxels", std::size_t{0});
      as.gain = a.value("gain", 1.0);
      as.base_rate = a.value("base_rate", 0.0);
      s.attributes.push_back(std::move(as));
    }
    s.noise_voxels = j.value("noise_voxels", std::size_t{0});
    s.noise_sd = j.value("noise_sd", 0.5);
    s.negative_confound_rate = j.value("negative_confound_rate", 0.9);
    s.embedding_dim = j.value("embedding_dim", std::size_t{32});
    s.embedding_noise = j.value("embedding_noise", 0.1);
    s.measured_images = j.value("measured_images", std::size_t{0});
    s.measured_noise_scale = j.value("measured_noise_scale", 1.0);
    s.pool_images = j.value("pool_images", std::size_t{0});
    s.region_size = j.value("region_size", std::size_t{50});
    s.default_seed = j.value("seed", std::uint64_t{42});
    if (j.contains("plan")) s.plan = plan_config_from_json(j.at("plan"));
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, std::string("world spec: ") + e.what());
  }
}

nlohmann::json world_spec_to_json(const WorldSpec& s) {
  nlohmann::json concepts = nlohmann::json::array();
  for (const auto& c : s.concepts) {
    concepts.push_back({{"name", c.name},
                        {"selective_voxels", c.selective_voxels},
                        {"selective_gain", c.selective_gain},
                        {"cooccurrence", c.cooccurrence},
                        {"counter_concepts", c.counter_concepts},
                        {"measured_rate", c.measured_rate}});
  }
  nlohmann::json attributes = nlohmann::json::array();
  for (const auto& a : s.attributes) {
    attributes.push_back(
        {{"name", a.name}, {"voxels", a.voxels}, {"gain", a.gain}, {"base_rate", a.base_rate}});
  }
  nlohmann::json plan = nlohmann::json::object();
  auto put = [&](const char* key, const std::optional<std::size_t>& v) {
    if (v) plan[key] = *v;
  };
  put("n_pos_train", s.plan.n_pos_train);
  put("n_pos_eval", s.plan.n_pos_eval);
  put("n_counter_concepts", s.plan.n_counter_concepts);
  put("n_prompts_per_counter", s.plan.n_prompts_per_counter);
  put("n_edit_parents_train", s.plan.n_edit_parents_train);
  put("n_edit_parents_eval", s.plan.n_edit_parents_eval);
  put("n_edits_per_parent", s.plan.n_edits_per_parent);
  return {{"concepts", concepts},
          {"attributes", attributes},
          {"noise_voxels", s.noise_voxels},
          {"noise_sd", s.noise_sd},
          {"negative_confound_rate", s.negative_confound_rate},
          {"embedding_dim", s.embedding_dim},
          {"embedding_noise", s.embedding_noise},
          {"measured_images", s.measured_images},
          {"measured_noise_scale", s.measured_noise_scale},
          {"pool_images", s.pool_images},
          {"region_size", s.region_size},
          {"seed", s.default_seed},
          {"plan", plan}};
}

WorldSpec read_world_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, path + ": " + e.what());
  }
  return world_spec_from_json(j);
}

SyntheticWorld::SyntheticWorld(WorldSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)), seed_(seed) {
  if (spec_.concepts.empty()) fail(ErrorCode::Config, "world needs at least one concept");
  for (const auto& c : spec_.concepts) {
    check_name(c.name);
    if (!vocabulary_.insert(c.name).second) fail(ErrorCode::Config, "duplicate flag '" + c.name + "'");
    check_probability(c.measured_rate, c.name + ".measured_rate");
  }
  for (const auto& a : spec_.attributes) {
    check_name(a.name);
    if (!vocabulary_.insert(a.name).second) fail(ErrorCode::Config, "duplicate flag '" + a.name + "'");
    check_probability(a.base_rate, a.name + ".base_rate");
  }
  for (std::size_t i = 0; i < spec_.concepts.size(); ++i) {
    const auto& c = spec_.concepts[i];
    concept_pos_[c.name] = i;
    for (const auto& [flag, p] : c.cooccurrence) {
      check_probability(p, c.name + ".cooccurrence." + flag);
      if (!vocabulary_.count(flag) || flag == c.name) {
        fail(ErrorCode::Config, "concept '" + c.name + "' co-occurs with unknown flag '" + flag + "'");
      }
    }
    for (const auto& cc : c.counter_concepts) {
      if (!vocabulary_.count(cc) || cc == c.name) {
        fail(ErrorCode::Config, "concept '" + c.name + "' has invalid counter concept '" + cc + "'");
      }
    }
  }
  check_probability(spec_.negative_confound_rate, "negative_confound_rate");
  if (!(spec_.noise_sd >= 0.0)) fail(ErrorCode::Config, "noise_sd must be non-negative");
  if (spec_.embedding_dim == 0) fail(ErrorCode::Config, "embedding_dim must be positive");

  for (const auto& c : spec_.concepts) {
    for (std::size_t i = 0; i < c.selective_voxels; ++i) {
      voxels_.push_back({VoxelType::ConceptSelective, c.name, c.selective_gain, spec_.noise_sd});
    }
  }
  for (const auto& a : spec_.attributes) {
    for (std::size_t i = 0; i < a.voxels; ++i) {
      voxels_.push_back({VoxelType::ConfoundDriven, a.name, a.gain, spec_.noise_sd});
    }
  }
  for (std::size_t i = 0; i < spec_.noise_voxels; ++i) {
    voxels_.push_back({VoxelType::Noise, "", 0.0, spec_.noise_sd});
  }
  if (std::none_of(voxels_.begin(), voxels_.end(),
                   [](const VoxelSpec& v) { return v.type == VoxelType::ConceptSelective; })) {
    fail(ErrorCode::Config, "world needs at least one concept-selective voxel");
  }
  for (std::size_t i = 0; i < voxels_.size(); ++i) voxel_ids_.push_back("v" + padded(i, 5));

  for (const auto& flag : vocabulary_) {
    flag_vectors_[flag] = gaussian_unit(seed_, "embed:" + flag, spec_.embedding_dim);
  }

  auto sample_scene = [&](const std::string& id) {
    auto rng = Rng::stream(seed_, "pool:" + id);
    Descriptor d;
    std::map<std::string, double> p_attr;
    for (const auto& c : spec_.concepts) {
      if (rng.bernoulli(c.measured_rate)) {
        d.push_back(c.name);
        for (const auto& [flag, p] : c.cooccurrence) p_attr[flag] = std::max(p_attr[flag], p);
      }
    }
    for (const auto& a : spec_.attributes) {
      double p = p_attr.count(a.name) ? std::max(p_attr[a.name], a.base_rate) : a.base_rate;
      if (rng.bernoulli(p)) d.push_back(a.name);
    }
    std::sort(d.begin(), d.end());
    d.erase(std::unique(d.begin(), d.end()), d.end());
    return d;
  };
  for (std::size_t i = 0; i < spec_.measured_images; ++i) {
    std::string id = "sim://measured/m" + padded(i, 6);
    pool_.ids.push_back(id);
    pool_.descriptors.push_back(sample_scene(id));
  }
  for (std::size_t i = 0; i < spec_.pool_images; ++i) {
    std::string id = "sim://pool/p" + padded(i, 6);
    image_pool_.ids.push_back(id);
    image_pool_.descriptors.push_back(sample_scene(id));
  }
}

const ConceptSpec& SyntheticWorld::concept_spec(const std::string& name) const {
  auto it = concept_pos_.find(name);
  if (it == concept_pos_.end()) fail(ErrorCode::InvalidArgument, "unknown concept '" + name + "'");
  return spec_.concepts[it->second];
}

bool SyntheticWorld::has_concept(const std::string& name) const {
  return concept_pos_.count(name) > 0;
}

std::vector<std::string> SyntheticWorld::counter_concepts(const std::string& target,
                                                          std::size_t n) const {
  const auto& c = concept_spec(target);
  std::vector<std::string> out;
  auto add = [&](const std::string& name) {
    if (out.size() >= n || name == target || mentions_concept(name, target)) return;
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  };
  for (const auto& cc : c.counter_concepts) add(cc);
  if (c.counter_concepts.empty()) {
    for (const auto& [flag, _] : c.cooccurrence) add(flag);
    for (const auto& a : spec_.attributes) add(a.name);
    for (const auto& other : spec_.concepts) add(other.name);
  }
  return out;
}

Descriptor SyntheticWorld::sample_positive(const std::string& target, const std::string& key) const {
  const auto& c = concept_spec(target);
  auto rng = Rng::stream(seed_, "desc:" + key);
  Descriptor d = {target};
  for (const auto& flag : vocabulary_) {
    if (flag == target) continue;
    double p = 0.0;
    if (auto it = c.cooccurrence.find(flag); it != c.cooccurrence.end()) {
      p = it->second;
    } else {
      for (const auto& a : spec_.attributes) {
        if (a.name == flag) p = a.base_rate;
      }
    }
    if (rng.bernoulli(p)) d.push_back(flag);
  }
  std::sort(d.begin(), d.end());
  return d;
}

Descriptor SyntheticWorld::sample_negative(const std::string& target, const std::string& counter,
                                           const std::string& key) const {
  const auto& c = concept_spec(target);
  if (!vocabulary_.count(counter) || counter == target) {
    fail(ErrorCode::InvalidArgument, "invalid counter concept '" + counter + "'");
  }
  const ConceptSpec* counter_spec = has_concept(counter) ? &concept_spec(counter) : nullptr;
  auto rng = Rng::stream(seed_, "desc:" + key);
  Descriptor d = {counter};
  for (const auto& flag : vocabulary_) {
    if (flag == target || flag == counter) continue;
    double p = 0.0;
    if (c.cooccurrence.count(flag)) {
      p = spec_.negative_confound_rate;
    } else if (counter_spec && counter_spec->cooccurrence.count(flag)) {
      p = counter_spec->cooccurrence.at(flag);
    } else {
      for (const auto& a : spec_.attributes) {
        if (a.name == flag) p = a.base_rate;
      }
    }
    if (rng.bernoulli(p)) d.push_back(flag);
  }
  std::sort(d.begin(), d.end());
  return d;
}

Descriptor SyntheticWorld::remove_flag(const Descriptor& d, const std::string& flag) {
  Descriptor out;
  for (const auto& f : d) {
    if (f != flag) out.push_back(f);
  }
  return out;
}

void SyntheticWorld::check_flags(const Descriptor& d) const {
  for (const auto& f : d) {
    if (!vocabulary_.count(f)) fail(ErrorCode::InvalidArgument, "unknown flag '" + f + "'");
  }
}

std::vector<float> SyntheticWorld::simulate_response(const Descriptor& descriptor,
                                                     const std::string& noise_key,
                                                     double noise_scale) const {
  check_flags(descriptor);
  Descriptor sorted = descriptor;
  std::sort(sorted.begin(), sorted.end());
  auto rng = Rng::stream(seed_, "noise:" + noise_key);
  std::vector<float> out(voxels_.size());
  for (std::size_t v = 0; v < voxels_.size(); ++v) {
    const auto& spec = voxels_[v];
    double signal = 0.0;
    if (spec.type != VoxelType::Noise && contains(sorted, spec.driver)) signal = spec.gain;
    double noise = rng.normal();
    out[v] = static_cast<float>(signal + spec.noise_sd * noise_scale * noise);
  }
  return out;
}

std::vector<float> SyntheticWorld::flag_embedding(const std::string& flag) const {
  auto it = flag_vectors_.find(flag);
  if (it != flag_vectors_.end()) return it->second;
  return gaussian_unit(seed_, "embed:" + flag, spec_.embedding_dim);
}

std::vector<float> SyntheticWorld::descriptor_embedding(const Descriptor& d,
                                                        const std::string& key) const {
  check_flags(d);
  std::vector<float> v(spec_.embedding_dim, 0.0f);
  for (const auto& f : d) {
    const auto& fv = flag_vectors_.at(f);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += fv[i];
  }
  auto rng = Rng::stream(seed_, "embnoise:" + key);
  double scale = d.empty() ? 1.0 : spec_.embedding_noise;
  for (auto& x : v) x += static_cast<float>(scale * rng.normal());
  normalize_unit(v);
  return v;
}

ResponseMatrix SyntheticWorld::measured_responses() const {
  ResponseMatrix m(pool_.ids, voxel_ids_, Provenance::Measured);
  for (std::size_t i = 0; i < pool_.ids.size(); ++i) {
    auto r = simulate_response(pool_.descriptors[i], "measured:" + pool_.ids[i],
                               spec_.measured_noise_scale);
    std::copy(r.begin(), r.end(), m.row(i).begin());
  }
  return m;
}

ResponseMatrix SyntheticWorld::predicted_on_measured() const {
  ResponseMatrix m(pool_.ids, voxel_ids_, Provenance::Predicted);
  for (std::size_t i = 0; i < pool_.ids.size(); ++i) {
    auto r = simulate_response(pool_.descriptors[i], pool_.ids[i]);
    std::copy(r.begin(), r.end(), m.row(i).begin());
  }
  return m;
}

EmbeddingIndex SyntheticWorld::measured_index() const {
  EmbeddingIndex index;
  index.dim = spec_.embedding_dim;
  for (std::size_t i = 0; i < pool_.ids.size(); ++i) {
    index.ids.push_back(pool_.ids[i]);
    auto v = descriptor_embedding(pool_.descriptors[i], pool_.ids[i]);
    index.vectors.insert(index.vectors.end(), v.begin(), v.end());
  }
  return index;
}

EmbeddingIndex SyntheticWorld::image_pool_index() const {
  EmbeddingIndex index;
  index.dim = spec_.embedding_dim;
  for (std::size_t i = 0; i < image_pool_.ids.size(); ++i) {
    index.ids.push_back(image_pool_.ids[i]);
    auto v = descriptor_embedding(image_pool_.descriptors[i], image_pool_.ids[i]);
    index.vectors.insert(index.vectors.end(), v.begin(), v.end());
  }
  return index;
}

EmbeddingIndex SyntheticWorld::concept_index(const std::vector<std::string>& names) const {
  EmbeddingIndex index;
  index.dim = spec_.embedding_dim;
  for (const auto& n : names) {
    index.ids.push_back(n);
    auto v = flag_embedding(n);
    index.vectors.insert(index.vectors.end(), v.begin(), v.end());
  }
  return index;
}

std::shared_ptr<const SyntheticWorld> build_world(const WorldSpec& spec, std::uint64_t seed) {
  return std::make_shared<const SyntheticWorld>(spec, seed);
}

std::string descriptor_to_string(const Descriptor& d) {
  std::string out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) out += '|';
    out += d[i];
  }
  return out;
}

// --- client ------------------------------------------------------------------

SimulatorClient::SimulatorClient(std::shared_ptr<const SyntheticWorld> world)
    : world_(std::move(world)) {
  const auto& pool = world_->measured_pool();
  for (std::size_t i = 0; i < pool.ids.size(); ++i) pool_pos_[pool.ids[i]] = i;
  const auto& images = world_->image_pool();
  for (std::size_t i = 0; i < images.ids.size(); ++i) image_pool_pos_[images.ids[i]] = i;
}

Descriptor SimulatorClient::descriptor_for(const std::string& ref) const {
  auto it = pool_pos_.find(ref);
  if (it != pool_pos_.end()) return world_->measured_pool().descriptors[it->second];
  auto jt = image_pool_pos_.find(ref);
  if (jt != image_pool_pos_.end()) return world_->image_pool().descriptors[jt->second];
  return parse_flags(ref);
}

ClientResponse SimulatorClient::call(const ClientRequest& req) {
  const auto& p = req.payload;
  ClientResponse res;
  try {
    switch (req.kind) {
      case RequestKind::ProposePrompts: {
        auto target = p.value("concept", "");
        auto kind = p.value("kind", "");
        auto context = p.value("context", "");
        auto n = p.value("n", std::size_t{0});
        int round = p.value("round", 0);
        std::vector<std::string> prompts;
        if (kind == "CounterConcept") {
          prompts = world_->counter_concepts(target, n);
        } else {
          for (std::size_t i = 0; i < n; ++i) {
            std::string tag = std::to_string(round) + "." + std::to_string(i);
            if (kind == "Positive") prompts.push_back("a photo of " + target + " #" + tag);
            else if (kind == "NegativePrompt") prompts.push_back("a photo of " + context + " #" + tag);
            else prompts.push_back("remove the main subject, keep the scene #" + tag);
          }
        }
        res.body = {{"prompts", prompts}};
        break;
      }
      case RequestKind::GenerateImage: {
        auto key = p.value("item_key", req.idempotency_key);
        Descriptor d = p.value("role", "") == "SemanticNegative"
                           ? world_->sample_negative(p.value("concept", ""),
                                                     p.value("counter_concept", ""), key)
                           : world_->sample_positive(p.value("concept", ""), key);
        res.body = {{"image_ref", make_ref(key, d)}};
        break;
      }
      case RequestKind::EditImage: {
        auto key = p.value("item_key", req.idempotency_key);
        auto d = SyntheticWorld::remove_flag(descriptor_for(p.value("image_ref", "")),
                                             p.value("concept", ""));
        res.body = {{"image_ref", make_ref(key, d)}};
        break;
      }
      case RequestKind::Verify: {
        auto d = descriptor_for(p.value("image_ref", ""));
        res.body = {{"answer", contains(d, p.value("concept", "")) ? "yes" : "no"}};
        break;
      }
      case RequestKind::Encode: {
        auto ref = p.value("image_ref", "");
        res.body = {{"vector", world_->simulate_response(descriptor_for(ref), ref)}};
        break;
      }
      case RequestKind::Embed: {
        auto text = p.value("text", "");
        if (p.value("is_image", false)) {
          res.body = {{"vector", world_->descriptor_embedding(descriptor_for(text), text)}};
        } else {
          res.body = {{"vector", world_->flag_embedding(text)}};
        }
        break;
      }
    }
  } catch (const Error& e) {
    return {Status::Fatal, nlohmann::json::object(), e.what()};
  }
  return res;
}

// --- experiment --------------------------------------------------------------

ConceptDataset simulate_dataset(const SyntheticWorld& world, const std::string& target,
                                const GenerationPlan& plan) {
  ConceptDataset ds;
  auto& m = ds.manifest;
  m.concept_name = target;
  m.counter_concepts = world.counter_concepts(target, plan.n_counter_concepts);
  std::vector<Descriptor> descriptors;

  auto add = [&](StimulusImage img, Descriptor d) {
    m.images.push_back(std::move(img));
    descriptors.push_back(std::move(d));
  };
  for (Split split : {Split::Train, Split::Eval}) {
    const std::string tag = split == Split::Train ? "train" : "eval";
    std::size_t n_pos = split == Split::Train ? plan.n_pos_train : plan.n_pos_eval;
    std::size_t n_parents =
        split == Split::Train ? plan.n_edit_parents_train : plan.n_edit_parents_eval;
    for (std::size_t i = 0; i < n_pos; ++i) {
      StimulusImage img;
      img.id = target + "/pos/" + tag + "/" + padded(i);
      img.role = Role::Positive;
      img.split = split;
      img.concept_name = target;
      img.verified_present = true;
      auto d = world.sample_positive(target, img.id);
      std::size_t parent_index = m.images.size();
      add(img, d);
      if (i < n_parents) {
        for (std::size_t e = 0; e < plan.n_edits_per_parent; ++e) {
          StimulusImage edit;
          edit.id = m.images[parent_index].id + "/edit/" + padded(e, 2);
          edit.role = Role::CounterfactualEdit;
          edit.split = split;
          edit.concept_name = target;
          edit.parent_positive_id = m.images[parent_index].id;
          edit.verified_absent = true;
          add(edit, SyntheticWorld::remove_flag(d, target));
        }
      }
    }
    for (const auto& counter : m.counter_concepts) {
      for (std::size_t j = 0; j < plan.n_prompts_per_counter; ++j) {
        StimulusImage img;
        img.id = target + "/neg/" + counter + "/" + tag + "/" + padded(j);
        img.role = Role::SemanticNegative;
        img.split = split;
        img.concept_name = target;
        img.counter_concept = counter;
        img.verified_absent = true;
        auto d = world.sample_negative(target, counter, img.id);
        add(img, d);
      }
    }
  }

  std::vector<std::string> ids;
  for (const auto& img : m.images) ids.push_back(img.id);
  ds.predicted = ResponseMatrix(ids, world.voxel_ids(), Provenance::Predicted);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto r = world.simulate_response(descriptors[i], ids[i]);
    std::copy(r.begin(), r.end(), ds.predicted.row(i).begin());
  }
  return ds;
}

namespace {

ScoringInputs split_inputs(const StimulusManifest& m, Split split, std::size_t k) {
  ScoringInputs in;
  in.positives = select_ids(m, Role::Positive, split);
  in.negatives = select_ids(m, Role::SemanticNegative, split);
  in.edits = edit_pairs(m, split);
  in.k = k;
  return in;
}

StrategyOutcome evaluate_strategy(const SyntheticWorld& world, const std::string& target,
                                  const Region& region, const ResponseMatrix& predicted,
                                  const ScoringInputs& eval, bool use_causal) {
  StrategyOutcome out;
  out.region = region.voxel_ids;
  auto scores = region_scores(predicted, eval, region.voxel_ids);
  out.eval_causal = scores.s_causal.value_or(0.0);
  out.eval_score = use_causal ? out.eval_causal : scores.s_pos;
  out.discovered = out.eval_score > 0.0;
  auto pos = index_of(world.voxel_ids());
  for (const auto& id : region.voxel_ids) {
    const auto& spec = world.voxels()[pos.at(id)];
    if (spec.type == VoxelType::ConceptSelective && spec.driver == target) ++out.n_selective;
    if (spec.type == VoxelType::ConfoundDriven) ++out.n_confound;
  }
  out.majority_selective = 2 * out.n_selective > region.voxel_ids.size();
  return out;
}

}  // namespace

FprResult run_fpr_experiment(const SyntheticWorld& world, const FprConfig& config) {
  const std::size_t k_region = config.region_size ? config.region_size : world.spec().region_size;
  require(k_region >= 1, "region size must be positive");
  const auto& concepts = world.spec().concepts;
  FprResult result;
  result.n_concepts = concepts.size();
  result.concepts.resize(concepts.size());

  parallel_for(concepts.size(), config.workers, [&](std::size_t ci) {
    const auto& c = concepts[ci];
    auto plan = build_generation_plan(c.name, world.spec().plan);
    auto ds = simulate_dataset(world, c.name, plan);
    auto train = split_inputs(ds.manifest, Split::Train, config.k_negatives);
    auto eval = split_inputs(ds.manifest, Split::Eval, config.k_negatives);
    auto table = score_voxels(ds.predicted, train);

    ConceptOutcome out;
    out.concept_name = c.name;
    out.has_selective_voxels = c.selective_voxels > 0;
    auto act_region = select_region_top_k(table, "s_pos", k_region, c.name);
    auto causal_region = select_region_top_k(table, "s_causal", k_region, c.name);
    out.activation = evaluate_strategy(world, c.name, act_region, ds.predicted, eval, false);
    out.causal = evaluate_strategy(world, c.name, causal_region, ds.predicted, eval, true);
    result.concepts[ci] = std::move(out);
  });

  std::size_t fp_a = 0, tp_a = 0, fp_c = 0, tp_c = 0, fp_a_pure = 0, fp_c_pure = 0;
  for (const auto& o : result.concepts) {
    auto tally = [](const StrategyOutcome& s, std::size_t& fp, std::size_t& tp) {
      if (!s.discovered) return;
      if (s.majority_selective) ++tp;
      else ++fp;
    };
    tally(o.activation, fp_a, tp_a);
    tally(o.causal, fp_c, tp_c);
    if (!o.has_selective_voxels) {
      ++result.n_pure;
      fp_a_pure += o.activation.discovered && !o.activation.majority_selective;
      fp_c_pure += o.causal.discovered && !o.causal.majority_selective;
    }
  }
  auto frac = [](std::size_t a, std::size_t n) {
    return n == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(n);
  };
  result.fpr_activation = frac(fp_a, result.n_concepts);
  result.tpr_activation = frac(tp_a, result.n_concepts);
  result.fpr_causal = frac(fp_c, result.n_concepts);
  result.tpr_causal = frac(tp_c, result.n_concepts);
  result.fpr_activation_pure = frac(fp_a_pure, result.n_pure);
  result.fpr_causal_pure = frac(fp_c_pure, result.n_pure);
  return result;
}

std::string fpr_metrics_csv(const FprResult& r) {
  std::string out = "metric,value\n";
  auto row = [&](const char* name, double v) {
    out += std::string(name) + "," + csv::format_double(v) + "\n";
  };
  row("n_concepts", static_cast<double>(r.n_concepts));
  row("fpr_activation", r.fpr_activation);
  row("tpr_activation", r.tpr_activation);
  row("fpr_causal", r.fpr_causal);
  row("tpr_causal", r.tpr_causal);
  row("n_pure_confound", static_cast<double>(r.n_pure));
  row("fpr_activation_pure_confound", r.fpr_activation_pure);
  row("fpr_causal_pure_confound", r.fpr_causal_pure);
  return out;
}

std::string fpr_concepts_csv(const FprResult& r) {
  std::string out =
      "concept,has_selective,strategy,discovered,majority_selective,n_selective,n_confound,"
      "eval_score,eval_causal\n";
  for (const auto& c : r.concepts) {
    for (const auto* s : {&c.activation, &c.causal}) {
      out += csv::join_row({c.concept_name, c.has_selective_voxels ? "true" : "false",
                            s == &c.activation ? "activation" : "causal",
                            s->discovered ? "true" : "false",
                            s->majority_selective ? "true" : "false", std::to_string(s->n_selective),
                            std::to_string(s->n_confound), csv::format_double(s->eval_score),
                            csv::format_double(s->eval_causal)}) +
             "\n";
    }
  }
  return out;
}

}  // namespace causeloc::sim
