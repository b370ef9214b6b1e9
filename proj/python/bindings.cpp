#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fforge/ae_pool.hpp"
#include "fforge/attacks.hpp"
#include "fforge/cli.hpp"
#include "fforge/detector.hpp"
#include "fforge/error.hpp"
#include "fforge/evaluation.hpp"
#include "fforge/jpeg.hpp"
#include "fforge/perturbations.hpp"
#include "fforge/synthdata.hpp"

namespace py = pybind11;
using namespace fforge;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("expected an H x W x 3 float array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.data().begin());
  return img;
}

FloatArray to_array(const Image& img) {
  FloatArray a({img.height(), img.width(), 3});
  std::copy(img.data().begin(), img.data().end(), a.mutable_data());
  return a;
}

std::vector<Image> to_images(const std::vector<FloatArray>& arrays) {
  std::vector<Image> out;
  out.reserve(arrays.size());
  for (const auto& a : arrays) out.push_back(to_image(a));
  return out;
}

Label to_label(int v) {
  if (v != 0 && v != 1) throw py::value_error("label must be 0 (real) or 1 (fake)");
  return static_cast<Label>(v);
}

AttackConfig attack_config(double epsilon, double alpha, int steps, bool random_start, std::uint64_t seed) {
  AttackConfig c;
  c.epsilon = epsilon;
  c.alpha = alpha;
  c.steps = steps;
  c.random_start = random_start;
  c.seed = seed;
  return c;
}

// Runs a command with captured streams: (status, stdout, stderr).
template <typename F>
py::tuple captured(F&& f) {
  std::ostringstream out, err;
  int status;
  {
    py::gil_scoped_release release;
    status = f(out, err);
  }
  return py::make_tuple(status, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of fforge";

  // Messages start with the error code name, e.g. "InvalidQuality: ...".
  py::register_exception<Error>(m, "FforgeError", PyExc_RuntimeError);

  m.def("roc_auc",
        [](const std::vector<double>& scores, const std::vector<int>& labels) {
          std::vector<Label> l;
          for (int v : labels) l.push_back(to_label(v));
          return roc_auc(scores, l);
        },
        py::arg("scores"), py::arg("labels"));
  m.def("video_scores",
        [](const std::vector<std::string>& ids, const std::vector<int>& frame_idx, const std::vector<double>& scores,
           const std::vector<int>& labels, int span) {
          if (ids.size() != scores.size() || frame_idx.size() != scores.size() || labels.size() != scores.size()) {
            throw py::value_error("all inputs must have the same length");
          }
          std::vector<ScoredFrame> frames;
          for (std::size_t i = 0; i < ids.size(); ++i) frames.push_back({ids[i], frame_idx[i], scores[i], to_label(labels[i])});
          py::list out;
          for (const auto& v : video_scores(frames, span)) out.append(py::make_tuple(v.video_id, v.score, int(v.label)));
          return out;
        },
        py::arg("video_ids"), py::arg("frame_idx"), py::arg("scores"), py::arg("labels"), py::arg("span") = 16);

  m.def("jpeg_roundtrip", [](const FloatArray& img, int quality) { return to_array(jpeg_roundtrip(to_image(img), {quality})); },
        py::arg("image"), py::arg("quality"));
  m.def("psnr", [](const FloatArray& a, const FloatArray& b) { return psnr(to_image(a), to_image(b)); });
  m.def("mae", [](const FloatArray& a, const FloatArray& b) { return mae(to_image(a), to_image(b)); });
  m.def("perturbation_names", [] {
    std::vector<std::string> names;
    for (const auto& s : perturbation_menu()) names.emplace_back(perturbation_name(s.kind));
    return names;
  });
  m.def("apply_perturbation",
        [](const FloatArray& img, const std::string& name, std::uint64_t seed) {
          return to_array(apply_perturbation(to_image(img), default_perturbation(parse_perturbation_kind(name), seed)));
        },
        py::arg("image"), py::arg("name"), py::arg("seed") = 0);

  m.def("gen_real",
        [](int video_id, int frame_idx, std::uint64_t seed, int image_size) {
          SynthConfig c;
          c.seed = seed;
          c.image_size = image_size;
          return to_array(gen_real(c, video_id, frame_idx));
        },
        py::arg("video_id"), py::arg("frame_idx"), py::arg("seed") = 0, py::arg("image_size") = 64);
  m.def("inject_fingerprint", [](const FloatArray& img, double strength) { return to_array(inject_fingerprint(to_image(img), strength)); },
        py::arg("image"), py::arg("strength") = 0.5);

  py::class_<Scorer, std::shared_ptr<Scorer>>(m, "Scorer")
      .def("score", [](const Scorer& s, const FloatArray& img) { return s.score(to_image(img)); })
      .def("score_batch", [](const Scorer& s, const std::vector<FloatArray>& imgs) { return s.score_batch(to_images(imgs)); })
      .def_property_readonly("gradient_queries", &Scorer::gradient_queries);

  py::class_<LinearScorer, Scorer, std::shared_ptr<LinearScorer>>(m, "LinearScorer")
      .def(py::init([](const FloatArray& w, double bias) {
             if (w.ndim() != 3 || w.shape(2) != 3) throw py::value_error("weights must be H x W x 3");
             return new LinearScorer(static_cast<int>(w.shape(0)), static_cast<int>(w.shape(1)),
                                     std::vector<float>(w.data(), w.data() + w.size()), bias);
           }),
           py::arg("weights"), py::arg("bias") = 0.0);

  py::class_<DetectorModel, Scorer, std::shared_ptr<DetectorModel>>(m, "DetectorModel")
      .def_static("load", &DetectorModel::load, py::arg("path"))
      .def_property_readonly("regime", [](const DetectorModel& d) { return std::string(to_string(d.regime())); })
      .def_property_readonly("input_size", &DetectorModel::input_size)
      .def_property_readonly("checksum", &DetectorModel::checksum);

  py::class_<AutoencoderPool>(m, "AutoencoderPool")
      .def_static("load", &AutoencoderPool::load, py::arg("path"))
      .def_property_readonly("size", &AutoencoderPool::size)
      .def("member_names", [](const AutoencoderPool& p) {
        std::vector<std::string> names;
        for (const auto& r : p.manifest().members) names.push_back(describe(r.config));
        return names;
      });
  m.def("chain_apply",
        [](const FloatArray& img, const AutoencoderPool& pool, const std::vector<int>& members) {
          return to_array(chain_apply(to_image(img), pool, ChainSpec{members}));
        },
        py::arg("image"), py::arg("pool"), py::arg("members"));

  m.def("pgd_whitebox",
        [](const Scorer& model, const FloatArray& img, int label, double epsilon, double alpha, int steps,
           bool random_start, std::uint64_t seed) {
          return to_array(pgd_whitebox(model, to_image(img), to_label(label),
                                       attack_config(epsilon, alpha, steps, random_start, seed)));
        },
        py::arg("model"), py::arg("image"), py::arg("label"), py::arg("epsilon") = 8.0 / 255.0,
        py::arg("alpha") = 2.0 / 255.0, py::arg("steps") = 10, py::arg("random_start") = true, py::arg("seed") = 0);

  m.def("run_synth", [](const std::filesystem::path& cfg) {
    const RunConfig c = load_run_config(cfg);
    return captured([&](std::ostream& o, std::ostream& e) { return cmd_synth(c, o, e); });
  });
  m.def("run_build_pool", [](const std::filesystem::path& cfg) {
    const RunConfig c = load_run_config(cfg);
    return captured([&](std::ostream& o, std::ostream& e) { return cmd_build_pool(c, o, e); });
  });
  m.def("run_train", [](const std::filesystem::path& cfg, const std::string& regime) {
    const RunConfig c = load_run_config(cfg);
    return captured([&](std::ostream& o, std::ostream& e) {
      return regime == "surrogate" ? cmd_train_surrogate(c, o, e) : cmd_train(c, regime, o, e);
    });
  });
  m.def("run_evaluate", [](const std::filesystem::path& cfg, const std::string& conditions) {
    RunConfig c = load_run_config(cfg);
    if (!conditions.empty()) c.conditions = conditions;
    return captured([&](std::ostream& o, std::ostream& e) { return cmd_evaluate(c, EvaluateOptions{}, o, e); });
  }, py::arg("config"), py::arg("conditions") = "");
}
