#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vqg/check_suite.hpp"
#include "vqg/errors.hpp"
#include "vqg/metrics.hpp"
#include "vqg/pipeline.hpp"
#include "vqg/text.hpp"

namespace py = pybind11;
using namespace vqg;

namespace {

// JSON crosses the boundary as text; the Python package decodes it.
std::string dumps(const nlohmann::json& j) { return j.dump(); }

DataPaths data_paths(const std::string& questions, const std::string& annotations, const std::string& category_map,
                     double test_fraction = 0.0) {
  DataPaths d;
  d.questions = questions;
  d.annotations = annotations;
  d.category_map = category_map;
  d.test_fraction = test_fraction;
  return d;
}

DecodeMode mode_for(std::size_t beam) { return beam > 0 ? DecodeMode::Beam : DecodeMode::Greedy; }

}  // namespace

PYBIND11_MODULE(_vqg, m) {
  m.doc() = "Category-guided visual question generation";

  // Translators run newest first, so the base class is registered first.
  py::register_exception<Error>(m, "VqgError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("tokenize", [](const std::string& text) { return tokenize(text); }, py::arg("text"));
  m.def("detokenize", [](const std::vector<std::string>& tokens) { return detokenize(tokens); }, py::arg("tokens"));
  m.def("category_names", [] {
    const auto& names = category_names();
    return std::vector<std::string>(names.begin(), names.end());
  });

  m.def(
      "score",
      [](const std::vector<std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>>>& pairs) {
        std::vector<EvalPair> ps;
        for (std::size_t i = 0; i < pairs.size(); ++i) ps.push_back({pairs[i].first, pairs[i].second, std::to_string(i)});
        return dumps(score_pairs(ps).to_json());
      },
      py::arg("pairs"), "BLEU-1/2/3, ROUGE-L, CIDEr and METEOR over (hypothesis, references) token lists");

  m.def(
      "dataset_stats",
      [](const std::string& q, const std::string& a, const std::string& c) { return dumps(dataset_stats(data_paths(q, a, c))); },
      py::arg("questions"), py::arg("annotations"), py::arg("category_map"));
  m.def(
      "build_vocab",
      [](const std::string& q, const std::string& a, const std::string& c, const std::string& out, double fraction) {
        return dumps(build_vocab_file(data_paths(q, a, c, fraction), out));
      },
      py::arg("questions"), py::arg("annotations"), py::arg("category_map"), py::arg("out"),
      py::arg("test_fraction") = 0.0);
  m.def(
      "make_synthetic",
      [](const std::string& dir, std::size_t n_images, std::size_t n_categories, std::uint64_t seed) {
        return dumps(make_synthetic_files(dir, n_images, n_categories, seed));
      },
      py::arg("output_dir"), py::arg("n_images"), py::arg("n_categories") = 4, py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::string& config, const std::string& output_dir, const std::string& resume) {
        const RunConfig rc = RunConfig::from_json(nlohmann::json::parse(config), output_dir);
        py::gil_scoped_release release;
        return dumps(run_training(rc, resume));
      },
      py::arg("config"), py::arg("output_dir"), py::arg("resume") = "");
  m.def(
      "ablate",
      [](const std::string& config, const std::string& output_dir, std::size_t beam) {
        const RunConfig rc = RunConfig::from_json(nlohmann::json::parse(config), output_dir);
        py::gil_scoped_release release;
        return dumps(run_ablation(rc, mode_for(beam), std::max<std::size_t>(beam, 1)).to_json());
      },
      py::arg("config"), py::arg("output_dir"), py::arg("beam") = 0);
  m.def(
      "generate",
      [](const std::string& checkpoint, const std::string& category, std::optional<std::uint64_t> image_id,
         std::vector<double> features, std::size_t beam, std::size_t max_len, const std::string& vocab,
         const std::string& feature_store) {
        CheckpointRequest where{checkpoint, vocab, {}};
        where.data.features = feature_store;
        GenRequest r;
        r.image_id = image_id;
        r.features = std::move(features);
        r.category = category;
        r.max_len = max_len;
        r.mode = mode_for(beam);
        r.beam_width = std::max<std::size_t>(beam, 1);
        return dumps(generate_from_checkpoint(where, r));
      },
      py::arg("checkpoint"), py::arg("category"), py::arg("image_id") = py::none(),
      py::arg("features") = std::vector<double>{}, py::arg("beam") = 0, py::arg("max_len") = kQuestionLen,
      py::arg("vocab") = "", py::arg("feature_store") = "");
  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& split, std::size_t beam, const std::string& vocab) {
        CheckpointRequest where{checkpoint, vocab, {}};
        EvaluateOptions opt;
        opt.split = split;
        opt.mode = mode_for(beam);
        opt.beam = std::max<std::size_t>(beam, 1);
        py::gil_scoped_release release;
        return dumps(evaluate_checkpoint(where, opt));
      },
      py::arg("checkpoint"), py::arg("split") = "test", py::arg("beam") = 0, py::arg("vocab") = "");

  m.def(
      "check",
      [](std::size_t seeds) {
        std::vector<std::tuple<std::string, double, std::size_t>> out;
        for (const auto& r : run_check_suite(seeds)) out.emplace_back(r.name, r.max_rel_error, r.coordinates);
        return out;
      },
      py::arg("seeds") = 10, "Finite-difference gradient checks: (name, max relative error, coordinates)");
}
