// Python bindings over the core library. Matrices cross as float64 numpy arrays.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hscmae/cca_linear.hpp"
#include "hscmae/data_io.hpp"
#include "hscmae/eval.hpp"
#include "hscmae/experiments.hpp"
#include "hscmae/losses.hpp"
#include "hscmae/trainer.hpp"

namespace py = pybind11;
using namespace hscmae;

namespace {

double dcca_value(const Matrix& za, const Matrix& zv, Index r, double epsilon) {
  Tape tape;
  const Var a = tape.constant(za);
  const Var v = tape.constant(zv);
  return dcca_loss(a, v, CcaConfig{r, epsilon}).item();
}

FeatureSet make_set(Matrix audio, Matrix visual, std::optional<std::vector<int>> labels) {
  FeatureSet s;
  s.audio = std::move(audio);
  s.visual = std::move(visual);
  s.labels = std::move(labels);
  s.validate();
  return s;
}

}  // namespace

PYBIND11_MODULE(_hscmae, m) {
  m.doc() = "Audio-visual representation learning core";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  py::class_<FeatureSet>(m, "FeatureSet")
      .def(py::init(&make_set), py::arg("audio"), py::arg("visual"), py::arg("labels") = py::none())
      .def_readwrite("audio", &FeatureSet::audio)
      .def_readwrite("visual", &FeatureSet::visual)
      .def_readwrite("labels", &FeatureSet::labels)
      .def("__len__", &FeatureSet::size);

  py::class_<SynthConfig>(m, "SynthConfig")
      .def(py::init<>())
      .def_readwrite("classes", &SynthConfig::classes)
      .def_readwrite("per_class", &SynthConfig::per_class)
      .def_readwrite("d_audio", &SynthConfig::d_audio)
      .def_readwrite("d_visual", &SynthConfig::d_visual)
      .def_readwrite("latent_dim", &SynthConfig::latent_dim)
      .def_readwrite("mean_scale", &SynthConfig::mean_scale)
      .def_readwrite("noise", &SynthConfig::noise)
      .def_readwrite("warp", &SynthConfig::warp)
      .def_readwrite("seed", &SynthConfig::seed);

  m.def("generate_synthetic", &generate_synthetic, py::arg("config"), "Returns (train, test) feature sets.");
  m.def("load_features", [](const std::filesystem::path& p) { return load_features(p); });
  m.def("save_features", [](const FeatureSet& s, const std::filesystem::path& p) {
    if (p.extension() == ".csv")
      save_features_csv(s, p);
    else
      save_features(s, p);
  });

  py::class_<LinearCcaModel>(m, "LinearCcaModel")
      .def_readonly("mean_a", &LinearCcaModel::mean_a)
      .def_readonly("mean_v", &LinearCcaModel::mean_v)
      .def_readonly("proj_a", &LinearCcaModel::proj_a)
      .def_readonly("proj_v", &LinearCcaModel::proj_v)
      .def_readonly("rho", &LinearCcaModel::rho)
      .def("transform", [](const LinearCcaModel& model, const Matrix& x, const Matrix& y) {
        CcaProjection p = transform(model, x, y);
        return py::make_tuple(p.a, p.v);
      });

  m.def("fit_linear_cca", &fit_linear_cca, py::arg("x"), py::arg("y"), py::arg("p"), py::arg("epsilon") = 1e-4);
  m.def("canonical_correlations", &canonical_correlations, py::arg("za"), py::arg("zv"), py::arg("epsilon") = 1e-4);
  m.def("dcca_loss", &dcca_value, py::arg("za"), py::arg("zv"), py::arg("r") = 32, py::arg("epsilon") = 1e-4,
        "Negative sum of the top-r canonical correlations.");

  py::class_<RetrievalReport>(m, "RetrievalReport")
      .def_readonly("map_a2v", &RetrievalReport::map_a2v)
      .def_readonly("map_v2a", &RetrievalReport::map_v2a)
      .def_readonly("map_avg", &RetrievalReport::map_avg)
      .def_readonly("gap", &RetrievalReport::gap)
      .def_readonly("ap_a2v", &RetrievalReport::ap_a2v)
      .def_readonly("ap_v2a", &RetrievalReport::ap_v2a);

  m.def(
      "mean_average_precision",
      [](const Matrix& sim, const std::vector<int>& ql, const std::vector<int>& gl) {
        return mean_average_precision(sim, ql, gl);
      },
      py::arg("similarity"), py::arg("query_labels"), py::arg("gallery_labels"));
  m.def(
      "cross_modal_map",
      [](const Matrix& za, const Matrix& zv, const std::vector<int>& labels) { return cross_modal_map(za, zv, labels); },
      py::arg("za"), py::arg("zv"), py::arg("labels"));

  py::class_<TrainResult>(m, "TrainResult")
      .def_property_readonly("step", [](const TrainResult& r) { return r.state.step; })
      .def_readonly("cca", &TrainResult::cca)
      .def_property_readonly("epoch_totals",
                             [](const TrainResult& r) {
                               std::vector<double> t;
                               for (const EpochLog& log : r.logs) t.push_back(log.total);
                               return t;
                             })
      .def(
          "embed",
          [](TrainResult& r, const Matrix& audio, const Matrix& visual) {
            Embeddings z = retrieval_embeddings(r.state.student, r.cca, audio, visual);
            return py::make_tuple(z.audio, z.visual);
          },
          py::arg("audio"), py::arg("visual"))
      .def("evaluate", [](TrainResult& r, const FeatureSet& test) { return evaluate(r.state.student, r.cca, test); })
      .def("save", [](const TrainResult& r, const std::filesystem::path& p) { save_checkpoint(p, r.state, r.cca); });

  // keyword surface mirrors the command-line flags
  m.def(
      "train",
      [](const FeatureSet& data, Index width, Index heads, Index proj_dim, double dropout, int epochs,
         Index batch_size, double lr, double mask_ratio, Index k, Index cca_r, Index cca_dim, int warmup_epochs,
         std::uint64_t seed, bool rec, bool infonce, bool cca, bool dis) {
        ModelConfig mc = ModelConfig::scaled(data.audio.cols(), data.visual.cols(), width, heads);
        mc.projector.out_dim = proj_dim;
        mc.encoder.dropout = dropout;
        mc.validate();
        TrainConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.optim.lr0 = lr;
        tc.mask_ratio = mask_ratio;
        tc.k = k;
        tc.cca.r = cca_r;
        tc.cca_post_dim = cca_dim;
        tc.warmup_epochs = warmup_epochs;
        tc.seed = seed;
        tc.active = {rec, infonce, cca, dis};
        py::gil_scoped_release release;
        return train(unlabeled(data), mc, tc);
      },
      py::arg("data"), py::kw_only(), py::arg("width") = 64, py::arg("heads") = 4, py::arg("proj_dim") = 32,
      py::arg("dropout") = 0.2, py::arg("epochs") = 20, py::arg("batch_size") = 200, py::arg("lr") = 3e-3,
      py::arg("mask_ratio") = 0.2, py::arg("k") = 5, py::arg("cca_r") = 32, py::arg("cca_dim") = 10,
      py::arg("warmup_epochs") = 5, py::arg("seed") = 0, py::arg("rec") = true, py::arg("infonce") = true,
      py::arg("cca") = true, py::arg("dis") = true);
}
