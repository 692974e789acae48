#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace causeloc {

enum class Role { Positive, SemanticNegative, CounterfactualEdit };
enum class Split { Train, Eval };
enum class Source { Generated, RetrievedPool, RetrievedMeasured };

const char* to_string(Role r);
const char* to_string(Split s);
const char* to_string(Source s);
Role parse_role(const std::string& s);
Split parse_split(const std::string& s);
Source parse_source(const std::string& s);

struct StimulusImage {
  std::string id;
  Role role = Role::Positive;
  Split split = Split::Train;
  Source source = Source::Generated;
  std::string concept_name;
  std::optional<std::string> counter_concept;
  std::optional<std::string> parent_positive_id;
  // Tri-state: nullopt means the check never ran.
  std::optional<bool> verified_present;
  std::optional<bool> verified_absent;
  std::optional<std::string> prompt_or_instruction;
  // Fields this version does not know about, kept for round trips.
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const StimulusImage&) const = default;
};

struct StimulusManifest {
  std::string concept_name;
  std::vector<StimulusImage> images;
  std::vector<std::string> counter_concepts;
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const StimulusManifest&) const = default;
};

/// Per-concept stimulus targets. Counts are targets only; attrition after
/// verification is reported downstream, not compensated here.
struct GenerationPlan {
  std::string concept_name;
  std::size_t n_pos_train = 200;
  std::size_t n_pos_eval = 100;
  std::size_t n_counter_concepts = 10;
  std::size_t n_prompts_per_counter = 10;
  std::size_t n_edit_parents_train = 50;
  std::size_t n_edit_parents_eval = 20;
  std::size_t n_edits_per_parent = 10;

  bool operator==(const GenerationPlan&) const = default;
};

struct PlanConfig {
  std::optional<std::size_t> n_pos_train;
  std::optional<std::size_t> n_pos_eval;
  std::optional<std::size_t> n_counter_concepts;
  std::optional<std::size_t> n_prompts_per_counter;
  std::optional<std::size_t> n_edit_parents_train;
  std::optional<std::size_t> n_edit_parents_eval;
  std::optional<std::size_t> n_edits_per_parent;
};

GenerationPlan build_generation_plan(const std::string& concept_name,
                                     const PlanConfig& config = {});

nlohmann::json plan_to_json(const GenerationPlan& plan);
PlanConfig plan_config_from_json(const nlohmann::json& j);

enum class ViolationKind {
  DuplicateId,
  DanglingParent,
  ParentNotPositive,
  MissingCounterConcept,
  UnlistedCounterConcept,
  PositiveHasParent,
  PositiveHasCounterConcept,
  EmptyId,
};

struct Violation {
  ViolationKind kind;
  std::string image_id;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_manifest(const StimulusManifest& m);

// Ids of images matching role and split (and, when given, source), in
// manifest order.
std::vector<std::string> select_ids(const StimulusManifest& m, Role role,
                                    std::optional<Split> split = std::nullopt,
                                    std::optional<Source> source = std::nullopt);

// Positive id -> edit ids for edits whose parent lies in the given split.
// Positives without edits are present with an empty list.
std::map<std::string, std::vector<std::string>> edit_pairs(
    const StimulusManifest& m, std::optional<Split> split = std::nullopt);

// Line-delimited JSON: one header record, then one record per image.
std::string manifest_to_jsonl(const StimulusManifest& m);
StimulusManifest manifest_from_jsonl(const std::string& text);
void write_manifest(const StimulusManifest& m, const std::string& path);
StimulusManifest read_manifest(const std::string& path);

}  // namespace causeloc
