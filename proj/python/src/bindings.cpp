#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "causeloc/error.hpp"
#include "causeloc/matrix_store.hpp"
#include "causeloc/pipeline.hpp"
#include "causeloc/region.hpp"
#include "causeloc/retrieval.hpp"
#include "causeloc/scoring.hpp"
#include "causeloc/simulator.hpp"
#include "causeloc/stats.hpp"
#include "causeloc/stimulus.hpp"
#include "causeloc/verdict.hpp"

namespace py = pybind11;
using namespace causeloc;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

ResponseMatrix to_matrix(const FloatArray& values, std::vector<std::string> images,
                         std::vector<std::string> voxels) {
  if (values.ndim() != 2) throw std::invalid_argument("values must be 2-D (images x voxels)");
  if (static_cast<std::size_t>(values.shape(0)) != images.size() ||
      static_cast<std::size_t>(values.shape(1)) != voxels.size()) {
    throw std::invalid_argument("values shape does not match the id lists");
  }
  ResponseMatrix m(std::move(images), std::move(voxels));
  std::copy(values.data(), values.data() + values.size(), m.values.begin());
  return m;
}

py::array_t<float> to_array(const ResponseMatrix& m) {
  py::array_t<float> out({m.n_images(), m.n_voxels()});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

// Python dicts cross the boundary as JSON text.
nlohmann::json from_py(const py::object& o) {
  auto dumps = py::module_::import("json").attr("dumps");
  return nlohmann::json::parse(dumps(o).cast<std::string>());
}

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::dict score_table_dict(const VoxelScoreTable& t) {
  py::dict d;
  d["voxel_ids"] = t.voxel_ids;
  for (const auto& name : t.score_names()) d[py::str(name)] = t.column(name);
  d["partial_causal"] = t.partial_causal;
  return d;
}

VoxelScoreTable table_from_dict(const py::dict& d) {
  VoxelScoreTable t;
  t.voxel_ids = d["voxel_ids"].cast<std::vector<std::string>>();
  for (auto [key, value] : d) {
    auto name = key.cast<std::string>();
    if (name == "voxel_ids" || name == "partial_causal") continue;
    auto col = value.cast<ScoreVector>();
    if (name == "s_pos") t.s_pos = col;
    else if (name == "s_neg") t.s_neg = col;
    else if (name == "s_edit") t.s_edit = col;
    else if (name == "s_causal") t.s_causal = col;
    else t.components[name] = col;
  }
  return t;
}

py::dict region_dict(const Region& r) {
  py::dict d;
  d["voxel_ids"] = r.voxel_ids;
  d["scores"] = r.scores;
  d["mode"] = to_string(r.mode);
  d["score"] = r.selection_score_name;
  d["short"] = r.short_region;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Causal concept localization engine";

  py::register_exception<Error>(m, "CauselocError", PyExc_RuntimeError);

  m.def("generation_plan", [](const std::string& concept_name, const py::object& overrides) {
        auto cfg = overrides.is_none() ? PlanConfig{} : plan_config_from_json(from_py(overrides));
        return to_py(plan_to_json(build_generation_plan(concept_name, cfg)));
      }, py::arg("concept"), py::arg("overrides") = py::none());

  m.def("score_voxels",
        [](const FloatArray& values, std::vector<std::string> image_ids, std::vector<std::string> voxel_ids,
           std::vector<std::string> positives, std::vector<std::string> negatives, EditPairs edits,
           std::size_t k) {
          auto mat = to_matrix(values, std::move(image_ids), std::move(voxel_ids));
          ScoringInputs in{std::move(positives), std::move(negatives), std::move(edits), k};
          return score_table_dict(score_voxels(mat, in));
        },
        py::arg("values"), py::arg("image_ids"), py::arg("voxel_ids"), py::arg("positives"),
        py::arg("negatives") = std::vector<std::string>{}, py::arg("edits") = EditPairs{},
        py::arg("k") = kDefaultHardNegatives);

  m.def("region_scores",
        [](const FloatArray& values, std::vector<std::string> image_ids, std::vector<std::string> voxel_ids,
           std::vector<std::string> region, std::vector<std::string> positives,
           std::vector<std::string> negatives, EditPairs edits, std::size_t k) {
          auto mat = to_matrix(values, std::move(image_ids), std::move(voxel_ids));
          ScoringInputs in{std::move(positives), std::move(negatives), std::move(edits), k};
          return to_py(region_scores_to_json(region_scores(mat, in, region)));
        },
        py::arg("values"), py::arg("image_ids"), py::arg("voxel_ids"), py::arg("region"),
        py::arg("positives"), py::arg("negatives") = std::vector<std::string>{},
        py::arg("edits") = EditPairs{}, py::arg("k") = kDefaultHardNegatives);

  m.def("combined_score",
        [](const ComponentScores& components, const ComponentWeights& weights, bool standardize) {
          return combined_ranking_score(components, weights, standardize);
        },
        py::arg("components"), py::arg("weights") = ComponentWeights{}, py::arg("standardize") = false);

  m.def("select_region",
        [](const py::dict& table, const std::string& mode, const std::string& score, std::size_t k) {
          auto t = table_from_dict(table);
          if (mode == "positive-causal") return region_dict(select_region_positive_causal(t));
          if (mode == "top-k") return region_dict(select_region_top_k(t, score, k));
          throw Error(ErrorCode::InvalidArgument, "unknown region mode '" + mode + "'");
        },
        py::arg("table"), py::arg("mode") = "top-k", py::arg("score") = "s_causal",
        py::arg("k") = kDefaultRegionSize);

  m.def("empirical_p_value", &empirical_p_value, py::arg("target"), py::arg("baselines"));

  m.def("decide", [](bool strong_evidence, bool high_coverage) {
        return std::string(to_string(decide(strong_evidence ? CausalEvidence::Strong : CausalEvidence::Weak,
                                            high_coverage ? CoverageLevel::High : CoverageLevel::Low)));
      }, py::arg("strong_evidence"), py::arg("high_coverage"));

  m.def("zscore_normalize",
        [](const FloatArray& values, std::vector<std::string> image_ids, std::vector<std::string> voxel_ids) {
          auto z = zscore_normalize(to_matrix(values, std::move(image_ids), std::move(voxel_ids)));
          py::dict d;
          d["values"] = to_array(z.matrix);
          d["voxel_ids"] = z.matrix.voxel_ids;
          d["mean"] = z.stats.mean;
          d["std"] = z.stats.stddev;
          d["dead_voxel_ids"] = z.stats.dead_voxel_ids;
          return d;
        },
        py::arg("values"), py::arg("image_ids"), py::arg("voxel_ids"));

  m.def("reliability_mask",
        [](const FloatArray& predicted, const FloatArray& measured, double threshold) {
          std::vector<std::string> images, voxels;
          for (py::ssize_t i = 0; i < predicted.shape(0); ++i) images.push_back("i" + std::to_string(i));
          for (py::ssize_t v = 0; v < (predicted.ndim() == 2 ? predicted.shape(1) : 0); ++v) {
            voxels.push_back("v" + std::to_string(v));
          }
          auto mask = filter_voxels_by_reliability(to_matrix(predicted, images, voxels),
                                                   to_matrix(measured, images, voxels), threshold);
          return py::make_tuple(std::vector<bool>(mask.keep), mask.correlation);
        },
        py::arg("predicted"), py::arg("measured"), py::arg("threshold") = kDefaultReliabilityThreshold);

  m.def("two_stage_retrieval",
        [](const FloatArray& negative_query, const FloatArray& positive_query, std::vector<std::string> ids,
           const FloatArray& vectors, std::size_t m_candidates, std::size_t n) {
          if (vectors.ndim() != 2 || static_cast<std::size_t>(vectors.shape(0)) != ids.size()) {
            throw std::invalid_argument("vectors must be 2-D with one row per id");
          }
          EmbeddingIndex index;
          index.ids = std::move(ids);
          index.dim = static_cast<std::size_t>(vectors.shape(1));
          index.vectors.assign(vectors.data(), vectors.data() + vectors.size());
          std::span<const float> neg(negative_query.data(), static_cast<std::size_t>(negative_query.size()));
          std::span<const float> pos(positive_query.data(), static_cast<std::size_t>(positive_query.size()));
          return two_stage_negative_retrieval(neg, pos, index, m_candidates, n).ranked_ids;
        },
        py::arg("negative_query"), py::arg("positive_query"), py::arg("ids"), py::arg("vectors"),
        py::arg("m"), py::arg("n"));

  m.def("read_matrix", [](const std::string& path) {
        auto mat = read_matrix(path);
        return py::make_tuple(to_array(mat), mat.image_ids, mat.voxel_ids);
      }, py::arg("path"));

  m.def("write_matrix",
        [](const std::string& path, const FloatArray& values, std::vector<std::string> image_ids,
           std::vector<std::string> voxel_ids) {
          write_matrix(to_matrix(values, std::move(image_ids), std::move(voxel_ids)), path);
        },
        py::arg("path"), py::arg("values"), py::arg("image_ids"), py::arg("voxel_ids"));

  m.def("simulate",
        [](const std::string& world_path, std::uint64_t seed, bool noiseless, std::size_t workers) {
          auto spec = sim::read_world_spec(world_path);
          if (noiseless) spec.noise_sd = 0.0;
          sim::FprResult r;
          {
            py::gil_scoped_release release;
            r = sim::run_fpr_experiment(*sim::build_world(spec, seed), {0, 10, workers});
          }
          py::dict d;
          d["n_concepts"] = r.n_concepts;
          d["fpr_activation"] = r.fpr_activation;
          d["tpr_activation"] = r.tpr_activation;
          d["fpr_causal"] = r.fpr_causal;
          d["tpr_causal"] = r.tpr_causal;
          d["fpr_activation_pure"] = r.fpr_activation_pure;
          d["fpr_causal_pure"] = r.fpr_causal_pure;
          return d;
        },
        py::arg("world"), py::arg("seed") = 42, py::arg("noiseless") = false, py::arg("workers") = 1);

  m.def("run_pipeline",
        [](const std::string& config_path, const py::object& output_dir, const py::object& workers) {
          auto cfg = read_config(config_path);
          if (!output_dir.is_none()) cfg.output_dir = output_dir.cast<std::string>();
          if (!workers.is_none()) cfg.workers = workers.cast<std::size_t>();
          PipelineResult r;
          {
            py::gil_scoped_release release;
            r = run_pipeline(cfg);
          }
          py::dict verdicts;
          for (const auto& rep : r.reports) {
            verdicts[py::str(rep.concept_name)] = rep.ok ? std::string(to_string(rep.verdict.decision))
                                                         : "error: " + rep.error;
          }
          py::dict d;
          d["exit_code"] = r.exit_code;
          d["fatal_error"] = r.fatal_error;
          d["verdicts"] = verdicts;
          d["output_dir"] = cfg.output_dir;
          return d;
        },
        py::arg("config"), py::arg("output_dir") = py::none(), py::arg("workers") = py::none());
}
