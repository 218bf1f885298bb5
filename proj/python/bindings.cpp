#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cmdrec/metrics.hpp"
#include "cmdrec/service.hpp"
#include "cmdrec/synthgen.hpp"

namespace py = pybind11;
using namespace cmdrec;

namespace {

py::dict item_dict(const PredictionItem& it) {
  py::dict d;
  d["id"] = it.id;
  d["name"] = it.name;
  d["category"] = std::string(to_string(it.category));
  d["loc_id"] = it.loc_id;
  d["score"] = it.score;
  return d;
}

}  // namespace

PYBIND11_MODULE(_cmdrec, m) {
  m.doc() = "Next-command recommendation for BIM event logs";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error(e.what());
    }
  });

  m.def("generate", [](const std::string& spec_json) {
    auto c = generate(GeneratorSpec::from_json_text(spec_json));
    return py::make_tuple(c.files, sequences_to_text(c.truth.clean));
  }, py::arg("spec_json") = "{}", "Synthetic log files and the clean ground truth as TSV.");

  m.def("bayes_recall", [](const std::string& spec_json, std::size_t k) {
    return bayes_recall(GeneratorSpec::from_json_text(spec_json), k);
  }, py::arg("spec_json") = "{}", py::arg("k") = 5);

  m.def("preprocess", [](const std::vector<std::string>& files) {
    auto loaded = load_sessions_from_text(files);
    return sequences_to_text(run_pipeline(loaded.sessions, PipelineConfig{}).sequences);
  }, py::arg("files"), "Runs the default pipeline over raw log texts; returns clean sequences as TSV.");

  m.def("rank_of", &rank_of, py::arg("scores"), py::arg("true_id"));
  m.def("recall_at_k", py::overload_cast<const std::vector<std::size_t>&, std::size_t>(&recall_at_k),
        py::arg("ranks"), py::arg("k"));
  m.def("ndcg_at_k", py::overload_cast<const std::vector<std::size_t>&, std::size_t>(&ndcg_at_k),
        py::arg("ranks"), py::arg("k"));
  m.def("preset_names", &preset_names);

  py::class_<Recommender, std::shared_ptr<Recommender>>(m, "Recommender")
      .def(py::init([](const std::string& run_dir, const std::string& tag) {
             return std::make_shared<Recommender>(load_run(run_dir), tag);
           }),
           py::arg("run_dir"), py::arg("tag") = "model")
      .def("predict", [](const Recommender& r, const std::vector<std::string>& prefix, int k) {
             if (prefix.empty()) throw Error(ErrorCode::EmptyPrefix, "prefix is empty");
             PredictResponse resp;
             {
               py::gil_scoped_release nogil;
               resp = r.predict(r.context_from_names(prefix), k);
             }
             py::list out;
             for (const auto& it : resp.items) out.append(item_dict(it));
             return out;
           },
           py::arg("prefix"), py::arg("k") = 5)
      .def_property_readonly("tag", &Recommender::tag)
      .def_property_readonly("vocab_size", [](const Recommender& r) { return r.vocab().size(); });
}
