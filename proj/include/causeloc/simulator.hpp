#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "causeloc/clients.hpp"
#include "causeloc/matrix_store.hpp"
#include "causeloc/stimulus.hpp"

namespace causeloc::sim {

enum class VoxelType { ConceptSelective, ConfoundDriven, Noise };

const char* to_string(VoxelType t);

struct VoxelSpec {
  VoxelType type = VoxelType::Noise;
  std::string driver;  // concept or attribute name; empty for Noise
  double gain = 0.0;
  double noise_sd = 0.0;
};

struct AttributeSpec {
  std::string name;
  std::size_t voxels = 0;
  double gain = 1.0;
  double base_rate = 0.0;  // P(attribute) in images not otherwise biased
};

struct ConceptSpec {
  std::string name;
  std::size_t selective_voxels = 0;
  double selective_gain = 1.0;
  // P(attribute | concept present).
  std::map<std::string, double> cooccurrence;
  // Empty: derived from the world (confounds first, then other flags).
  std::vector<std::string> counter_concepts;
  // Probability that the concept itself appears in a measured-pool image.
  double measured_rate = 0.05;
};

/// Declarative world description, loaded from JSON.
struct WorldSpec {
  std::vector<ConceptSpec> concepts;
  std::vector<AttributeSpec> attributes;
  std::size_t noise_voxels = 0;
  double noise_sd = 0.5;
  // P(target's confound attributes | semantic negative).
  double negative_confound_rate = 0.9;
  std::size_t embedding_dim = 32;
  double embedding_noise = 0.1;
  // Measured pool.
  std::size_t measured_images = 0;
  double measured_noise_scale = 1.0;
  // Unmeasured image pool (encoder predictions only).
  std::size_t pool_images = 0;
  // FPR experiment settings.
  std::size_t region_size = 50;
  PlanConfig plan;
  std::uint64_t default_seed = 42;
};

WorldSpec world_spec_from_json(const nlohmann::json& j);
nlohmann::json world_spec_to_json(const WorldSpec& spec);
WorldSpec read_world_spec(const std::string& path);

using Descriptor = std::vector<std::string>;  // sorted, unique flags

struct MeasuredPool {
  std::vector<std::string> ids;
  std::vector<Descriptor> descriptors;
};

class SyntheticWorld {
 public:
  SyntheticWorld(WorldSpec spec, std::uint64_t seed);

  const WorldSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<VoxelSpec>& voxels() const { return voxels_; }
  const std::vector<std::string>& voxel_ids() const { return voxel_ids_; }
  const std::set<std::string>& vocabulary() const { return vocabulary_; }
  const ConceptSpec& concept_spec(const std::string& name) const;
  bool has_concept(const std::string& name) const;

  // Counter concepts for a target, none of which mention the target.
  std::vector<std::string> counter_concepts(const std::string& target, std::size_t n) const;

  Descriptor sample_positive(const std::string& target, const std::string& key) const;
  Descriptor sample_negative(const std::string& target, const std::string& counter,
                             const std::string& key) const;
  static Descriptor remove_flag(const Descriptor& d, const std::string& flag);

  // gain * 1[driver in descriptor] + noise; noise drawn from the stream
  // keyed by noise_key, scaled by noise_scale.
  std::vector<float> simulate_response(const Descriptor& descriptor, const std::string& noise_key,
                                       double noise_scale = 1.0) const;

  std::vector<float> flag_embedding(const std::string& flag) const;
  std::vector<float> descriptor_embedding(const Descriptor& d, const std::string& key) const;

  const MeasuredPool& measured_pool() const { return pool_; }
  const MeasuredPool& image_pool() const { return image_pool_; }
  EmbeddingIndex image_pool_index() const;
  // Measured responses (noise scaled by measured_noise_scale) and encoder
  // predictions for the measured pool.
  ResponseMatrix measured_responses() const;
  ResponseMatrix predicted_on_measured() const;
  EmbeddingIndex measured_index() const;
  EmbeddingIndex concept_index(const std::vector<std::string>& names) const;

 private:
  void check_flags(const Descriptor& d) const;

  WorldSpec spec_;
  std::uint64_t seed_;
  std::vector<VoxelSpec> voxels_;
  std::vector<std::string> voxel_ids_;
  std::set<std::string> vocabulary_;
  std::map<std::string, std::size_t> concept_pos_;
  std::map<std::string, std::vector<float>> flag_vectors_;
  MeasuredPool pool_;
  MeasuredPool image_pool_;
};

std::shared_ptr<const SyntheticWorld> build_world(const WorldSpec& spec, std::uint64_t seed);

std::string descriptor_to_string(const Descriptor& d);

/// Model client backed by a world. Generated refs carry their descriptor
/// ("sim://<key>?flags=a|b"); measured-pool images use "sim://measured/<id>".
/// Encode returns simulate_response(descriptor, ref) exactly.
class SimulatorClient : public ModelClient {
 public:
  explicit SimulatorClient(std::shared_ptr<const SyntheticWorld> world);
  ClientResponse call(const ClientRequest& request) override;

  Descriptor descriptor_for(const std::string& ref) const;

 private:
  std::shared_ptr<const SyntheticWorld> world_;
  std::map<std::string, std::size_t> pool_pos_;
  std::map<std::string, std::size_t> image_pool_pos_;
};

// --- FPR / TPR experiment ----------------------------------------------------

struct ConceptDataset {
  StimulusManifest manifest;
  ResponseMatrix predicted;
};

// Generated dataset for one concept with responses computed directly from
// the world (no client round trips).
ConceptDataset simulate_dataset(const SyntheticWorld& world, const std::string& target,
                                const GenerationPlan& plan);

struct StrategyOutcome {
  std::vector<std::string> region;
  double eval_score = 0.0;     // score that decides discovery
  double eval_causal = 0.0;    // region causal score on the eval split
  bool discovered = false;
  bool majority_selective = false;
  std::size_t n_selective = 0;
  std::size_t n_confound = 0;
};

struct ConceptOutcome {
  std::string concept_name;
  bool has_selective_voxels = false;
  StrategyOutcome activation;
  StrategyOutcome causal;
};

struct FprResult {
  std::size_t n_concepts = 0;
  double fpr_activation = 0.0;
  double tpr_activation = 0.0;
  double fpr_causal = 0.0;
  double tpr_causal = 0.0;
  // Restricted to concepts without selective voxels.
  double fpr_activation_pure = 0.0;
  double fpr_causal_pure = 0.0;
  std::size_t n_pure = 0;
  std::vector<ConceptOutcome> concepts;
};

struct FprConfig {
  std::size_t region_size = 0;  // 0: world spec value
  std::size_t k_negatives = 10;
  std::size_t workers = 1;
};

// Both strategies pick a top-K region on the train split (activation:
// S_pos; causal: S_causal) and claim a discovery when the region's score on
// the held-out split is positive. A discovery is a true positive iff most
// region voxels are ConceptSelective for the target. Rates are fractions of
// the whole battery.
FprResult run_fpr_experiment(const SyntheticWorld& world, const FprConfig& config = {});

std::string fpr_metrics_csv(const FprResult& r);
std::string fpr_concepts_csv(const FprResult& r);

}  // namespace causeloc::sim
