#include "causeloc/stimulus.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "causeloc/error.hpp"

namespace causeloc {

const char* to_string(Role r) {
  switch (r) {
    case Role::Positive: return "Positive";
    case Role::SemanticNegative: return "SemanticNegative";
    case Role::CounterfactualEdit: return "CounterfactualEdit";
  }
  return "?";
}

const char* to_string(Split s) { return s == Split::Train ? "Train" : "Eval"; }

const char* to_string(Source s) {
  switch (s) {
    case Source::Generated: return "Generated";
    case Source::RetrievedPool: return "RetrievedPool";
    case Source::RetrievedMeasured: return "RetrievedMeasured";
  }
  return "?";
}

Role parse_role(const std::string& s) {
  if (s == "Positive") return Role::Positive;
  if (s == "SemanticNegative") return Role::SemanticNegative;
  if (s == "CounterfactualEdit") return Role::CounterfactualEdit;
  fail(ErrorCode::Parse, "unknown role '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "Train") return Split::Train;
  if (s == "Eval") return Split::Eval;
  fail(ErrorCode::Parse, "unknown split '" + s + "'");
}

Source parse_source(const std::string& s) {
  if (s == "Generated") return Source::Generated;
  if (s == "RetrievedPool") return Source::RetrievedPool;
  if (s == "RetrievedMeasured") return Source::RetrievedMeasured;
  fail(ErrorCode::Parse, "unknown source '" + s + "'");
}

GenerationPlan build_generation_plan(const std::string& concept_name,
                                     const PlanConfig& config) {
  require(!concept_name.empty(), "concept must be non-empty");
  GenerationPlan plan;
  plan.concept_name = concept_name;
  auto apply = [](std::size_t& field, const std::optional<std::size_t>& v) {
    if (v) field = *v;
  };
  apply(plan.n_pos_train, config.n_pos_train);
  apply(plan.n_pos_eval, config.n_pos_eval);
  apply(plan.n_counter_concepts, config.n_counter_concepts);
  apply(plan.n_prompts_per_counter, config.n_prompts_per_counter);
  apply(plan.n_edit_parents_train, config.n_edit_parents_train);
  apply(plan.n_edit_parents_eval, config.n_edit_parents_eval);
  apply(plan.n_edits_per_parent, config.n_edits_per_parent);
  require(plan.n_edit_parents_train <= plan.n_pos_train,
          "edit parents exceed positives (train)");
  require(plan.n_edit_parents_eval <= plan.n_pos_eval,
          "edit parents exceed positives (eval)");
  return plan;
}

nlohmann::json plan_to_json(const GenerationPlan& plan) {
  return {
      {"concept", plan.concept_name},
      {"n_pos_train", plan.n_pos_train},
      {"n_pos_eval", plan.n_pos_eval},
      {"n_counter_concepts", plan.n_counter_concepts},
      {"n_prompts_per_counter", plan.n_prompts_per_counter},
      {"n_edit_parents_train", plan.n_edit_parents_train},
      {"n_edit_parents_eval", plan.n_edit_parents_eval},
      {"n_edits_per_parent", plan.n_edits_per_parent},
  };
}

PlanConfig plan_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> kKnown = {
      "n_pos_train",          "n_pos_eval",           "n_counter_concepts",
      "n_prompts_per_counter", "n_edit_parents_train", "n_edit_parents_eval",
      "n_edits_per_parent"};
  PlanConfig c;
  if (j.is_null()) return c;
  if (!j.is_object()) fail(ErrorCode::Config, "plan overrides must be an object");
  for (auto& [key, value] : j.items()) {
    if (!kKnown.count(key)) fail(ErrorCode::Config, "unknown plan field '" + key + "'");
    if (!value.is_number_integer() || value.get<long long>() < 0) {
      fail(ErrorCode::Config, "plan field '" + key + "' must be a non-negative integer");
    }
  }
  auto get = [&](const char* key, std::optional<std::size_t>& out) {
    if (j.contains(key)) out = j.at(key).get<std::size_t>();
  };
  get("n_pos_train", c.n_pos_train);
  get("n_pos_eval", c.n_pos_eval);
  get("n_counter_concepts", c.n_counter_concepts);
  get("n_prompts_per_counter", c.n_prompts_per_counter);
  get("n_edit_parents_train", c.n_edit_parents_train);
  get("n_edit_parents_eval", c.n_edit_parents_eval);
  get("n_edits_per_parent", c.n_edits_per_parent);
  return c;
}

ValidationReport validate_manifest(const StimulusManifest& m) {
  ValidationReport report;
  auto add = [&](ViolationKind kind, const std::string& id, std::string msg) {
    report.violations.push_back({kind, id, std::move(msg)});
  };

  std::unordered_map<std::string, Role> roles;
  std::unordered_set<std::string> seen;
  for (const auto& img : m.images) {
    if (img.id.empty()) add(ViolationKind::EmptyId, img.id, "empty id");
    if (!seen.insert(img.id).second) {
      add(ViolationKind::DuplicateId, img.id, "duplicate id " + img.id);
    } else {
      roles.emplace(img.id, img.role);
    }
  }

  std::set<std::string> listed(m.counter_concepts.begin(), m.counter_concepts.end());
  for (const auto& img : m.images) {
    switch (img.role) {
      case Role::Positive:
        if (img.parent_positive_id) {
          add(ViolationKind::PositiveHasParent, img.id, "positive " + img.id + " has a parent");
        }
        if (img.counter_concept) {
          add(ViolationKind::PositiveHasCounterConcept, img.id,
              "positive " + img.id + " has a counter concept");
        }
        break;
      case Role::SemanticNegative:
        if (!img.counter_concept || img.counter_concept->empty()) {
          add(ViolationKind::MissingCounterConcept, img.id,
              "semantic negative " + img.id + " lacks a counter concept");
        } else if (!listed.count(*img.counter_concept)) {
          add(ViolationKind::UnlistedCounterConcept, img.id,
              "counter concept '" + *img.counter_concept + "' not listed in header");
        }
        break;
      case Role::CounterfactualEdit: {
        if (!img.parent_positive_id) {
          add(ViolationKind::DanglingParent, img.id, "dangling parent: edit " + img.id + " has none");
          break;
        }
        auto it = roles.find(*img.parent_positive_id);
        if (it == roles.end()) {
          add(ViolationKind::DanglingParent, img.id,
              "dangling parent " + *img.parent_positive_id + " for edit " + img.id);
        } else if (it->second != Role::Positive) {
          add(ViolationKind::ParentNotPositive, img.id,
              "parent " + *img.parent_positive_id + " of edit " + img.id + " is not a positive");
        }
        break;
      }
    }
  }
  return report;
}

std::vector<std::string> select_ids(const StimulusManifest& m, Role role,
                                    std::optional<Split> split,
                                    std::optional<Source> source) {
  std::vector<std::string> out;
  for (const auto& img : m.images) {
    if (img.role != role) continue;
    if (split && img.split != *split) continue;
    if (source && img.source != *source) continue;
    out.push_back(img.id);
  }
  return out;
}

std::map<std::string, std::vector<std::string>> edit_pairs(
    const StimulusManifest& m, std::optional<Split> split) {
  std::map<std::string, std::vector<std::string>> pairs;
  std::unordered_map<std::string, const StimulusImage*> by_id;
  for (const auto& img : m.images) {
    by_id.emplace(img.id, &img);
    if (img.role == Role::Positive && (!split || img.split == *split)) pairs[img.id];
  }
  for (const auto& img : m.images) {
    if (img.role != Role::CounterfactualEdit || !img.parent_positive_id) continue;
    auto it = pairs.find(*img.parent_positive_id);
    if (it != pairs.end()) it->second.push_back(img.id);
  }
  return pairs;
}

namespace {

const std::set<std::string>& image_fields() {
  static const std::set<std::string> kFields = {
      "id",       "role",  "split",           "source",          "concept",
      "counter_concept", "parent_positive_id", "verified_present", "verified_absent",
      "prompt_or_instruction"};
  return kFields;
}

nlohmann::json image_to_json(const StimulusImage& img) {
  nlohmann::json j = img.extra;
  j["id"] = img.id;
  j["role"] = to_string(img.role);
  j["split"] = to_string(img.split);
  j["source"] = to_string(img.source);
  j["concept"] = img.concept_name;
  if (img.counter_concept) j["counter_concept"] = *img.counter_concept;
  if (img.parent_positive_id) j["parent_positive_id"] = *img.parent_positive_id;
  if (img.verified_present) j["verified_present"] = *img.verified_present;
  if (img.verified_absent) j["verified_absent"] = *img.verified_absent;
  if (img.prompt_or_instruction) j["prompt_or_instruction"] = *img.prompt_or_instruction;
  return j;
}

template <typename T>
std::optional<T> opt_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

StimulusImage image_from_json(const nlohmann::json& j) {
  StimulusImage img;
  img.id = j.at("id").get<std::string>();
  img.role = parse_role(j.at("role").get<std::string>());
  img.split = parse_split(j.at("split").get<std::string>());
  img.source = parse_source(j.at("source").get<std::string>());
  img.concept_name = j.at("concept").get<std::string>();
  img.counter_concept = opt_field<std::string>(j, "counter_concept");
  img.parent_positive_id = opt_field<std::string>(j, "parent_positive_id");
  img.verified_present = opt_field<bool>(j, "verified_present");
  img.verified_absent = opt_field<bool>(j, "verified_absent");
  img.prompt_or_instruction = opt_field<std::string>(j, "prompt_or_instruction");
  for (auto& [key, value] : j.items()) {
    if (!image_fields().count(key)) img.extra[key] = value;
  }
  return img;
}

}  // namespace

std::string manifest_to_jsonl(const StimulusManifest& m) {
  nlohmann::json header = m.extra;
  header["record"] = "header";
  header["concept"] = m.concept_name;
  header["counter_concepts"] = m.counter_concepts;
  std::string out = header.dump() + "\n";
  for (const auto& img : m.images) out += image_to_json(img).dump() + "\n";
  return out;
}

StimulusManifest manifest_from_jsonl(const std::string& text) {
  StimulusManifest m;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Parse, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("record", "") != "header") {
          fail(ErrorCode::Parse, "manifest must start with a header record");
        }
        m.concept_name = j.at("concept").get<std::string>();
        m.counter_concepts = j.value("counter_concepts", std::vector<std::string>{});
        for (auto& [key, value] : j.items()) {
          if (key != "record" && key != "concept" && key != "counter_concepts") {
            m.extra[key] = value;
          }
        }
        have_header = true;
      } else {
        m.images.push_back(image_from_json(j));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Parse, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) fail(ErrorCode::Parse, "manifest has no header record");
  return m;
}

void write_manifest(const StimulusManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  out << manifest_to_jsonl(m);
}

StimulusManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return manifest_from_jsonl(ss.str());
}

}  // namespace causeloc
