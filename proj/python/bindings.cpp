// Python bindings for the core operations: feature-statistics extraction and
// randomization, dataset synthesis, training cells and the bias/discrepancy
// metrics.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sagnet/checkpoint.hpp"
#include "sagnet/evaluation.hpp"
#include "sagnet/experiments.hpp"
#include "sagnet/stylestats.hpp"
#include "sagnet/synthdata.hpp"
#include "sagnet/training.hpp"

namespace py = pybind11;
using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

sagnet::TensorPtr<double> tensor_from_array(const DArray& arr, const char* name, int want_dims = -1) {
  py::buffer_info info = arr.request();
  if (want_dims > 0 && info.ndim != want_dims && !(want_dims == 4 && info.ndim == 3)) {
    throw std::invalid_argument(std::string(name) + ": expected " + std::to_string(want_dims) +
                                " dimensions, got " + std::to_string(info.ndim));
  }
  std::vector<int> shape;
  for (auto d : info.shape) shape.push_back(static_cast<int>(d));
  if (want_dims == 4 && info.ndim == 3) shape.insert(shape.begin(), 1);
  const double* src = static_cast<const double*>(info.ptr);
  std::vector<double> data(src, src + arr.size());
  return sagnet::Tensor<double>::from_data(shape, std::move(data));
}

py::array_t<double> array_from_tensor(const sagnet::TensorPtr<double>& t) {
  std::vector<py::ssize_t> shape(t->shape.begin(), t->shape.end());
  py::array_t<double> out(shape);
  std::copy(t->data.begin(), t->data.end(), static_cast<double*>(out.request().ptr));
  return out;
}

py::array_t<float> array_from_image_set(const sagnet::ImageSet& set) {
  py::array_t<float> out({static_cast<py::ssize_t>(set.n), static_cast<py::ssize_t>(set.channels),
                          static_cast<py::ssize_t>(set.height), static_cast<py::ssize_t>(set.width)});
  std::copy(set.data.begin(), set.data.end(), static_cast<float*>(out.request().ptr));
  return out;
}

py::dict dict_from_image_set(const sagnet::ImageSet& set) {
  py::dict d;
  d["images"] = array_from_image_set(set);
  d["content"] = py::array_t<int>(set.content_labels.size(), set.content_labels.data());
  d["domain"] = py::array_t<int>(set.domain_labels.size(), set.domain_labels.data());
  if (!set.style_labels.empty()) {
    d["style"] = py::array_t<int>(set.style_labels.size(), set.style_labels.data());
  }
  return d;
}

template <typename V>
V get_or(const py::dict& d, const char* key, V fallback) {
  if (d.contains(key)) return d[key].cast<V>();
  return fallback;
}

sagnet::StyleShiftSpec spec_from_dict(const py::dict& d) {
  sagnet::StyleShiftSpec s;
  s.num_classes = get_or(d, "num_classes", s.num_classes);
  s.num_domains = get_or(d, "num_domains", s.num_domains);
  s.samples_per_class_per_domain = get_or(d, "samples_per_class_per_domain", s.samples_per_class_per_domain);
  s.image_size = get_or(d, "image_size", s.image_size);
  s.seed = get_or(d, "seed", s.seed);
  s.gain_spread = get_or(d, "gain_spread", s.gain_spread);
  s.offset_spread = get_or(d, "offset_spread", s.offset_spread);
  s.field_amp_max = get_or(d, "field_amp_max", s.field_amp_max);
  s.noise_min = get_or(d, "noise_min", s.noise_min);
  s.noise_max = get_or(d, "noise_max", s.noise_max);
  s.jitter_px = get_or(d, "jitter_px", s.jitter_px);
  s.palette_jitter = get_or(d, "palette_jitter", s.palette_jitter);
  s.train_frac = get_or(d, "train_frac", s.train_frac);
  s.val_frac = get_or(d, "val_frac", s.val_frac);
  s.stimulus_noise = get_or(d, "stimulus_noise", s.stimulus_noise);
  return s;
}

sagnet::StageCNNConfig net_from_dict(const py::dict& d) {
  sagnet::StageCNNConfig c;
  c.num_stages = get_or(d, "num_stages", c.num_stages);
  c.channels = get_or(d, "channels", c.channels);
  c.blocks_per_stage = get_or(d, "blocks_per_stage", c.blocks_per_stage);
  c.num_classes = get_or(d, "num_classes", c.num_classes);
  c.in_channels = get_or(d, "in_channels", c.in_channels);
  c.in_height = get_or(d, "in_height", c.in_height);
  c.in_width = get_or(d, "in_width", c.in_width);
  c.randomization_stage = get_or(d, "randomization_stage", c.randomization_stage);
  c.eps_norm = get_or(d, "eps_norm", c.eps_norm);
  c.eps_stats = get_or(d, "eps_stats", c.eps_stats);
  return c;
}

sagnet::TrainConfig train_from_dict(const py::dict& d) {
  sagnet::TrainConfig t;
  t.lambda_adv = get_or(d, "lambda_adv", t.lambda_adv);
  t.lambda_unl = get_or(d, "lambda_unl", t.lambda_unl);
  t.lr = get_or(d, "lr", t.lr);
  t.momentum = get_or(d, "momentum", t.momentum);
  t.weight_decay = get_or(d, "weight_decay", t.weight_decay);
  t.batch_size = get_or(d, "batch_size", t.batch_size);
  t.total_iters = get_or(d, "total_iters", t.total_iters);
  t.seed = get_or(d, "seed", t.seed);
  t.log_every = get_or(d, "log_every", t.log_every);
  t.style_randomization = get_or(d, "style_randomization", t.style_randomization);
  t.style_pathway = get_or(d, "style_pathway", t.style_pathway);
  return t;
}

py::dict dict_from_record(const sagnet::MetricsRecord& r) {
  py::module_ json_mod = py::module_::import("json");
  return json_mod.attr("loads")(r.to_json().dump()).cast<py::dict>();
}

class PyModel {
 public:
  explicit PyModel(sagnet::ModelBundle<float> model) : model_(std::move(model)) {}

  py::array_t<double> predict_logp(const DArray& images) {
    auto x64 = tensor_from_array(images, "images", 4);
    auto x = sagnet::Tensor<float>::create(x64->shape);
    for (std::size_t i = 0; i < x64->data.size(); ++i) x->data[i] = static_cast<float>(x64->data[i]);
    auto logp = sagnet::inference(model_, x);
    auto out = sagnet::Tensor<double>::create(logp->shape);
    for (std::size_t i = 0; i < logp->data.size(); ++i) out->data[i] = static_cast<double>(logp->data[i]);
    return array_from_tensor(out);
  }

  std::int64_t inference_param_count() const { return sagnet::param_count(model_.inference_params()); }
  std::int64_t total_param_count() const { return sagnet::param_count(model_.all_params()); }
  std::int64_t inference_multiplies() const { return sagnet::inference_multiplies_per_image(model_.config); }

  void save(const std::string& path) const { sagnet::save_checkpoint(path, model_, 0); }

  sagnet::ModelBundle<float>& bundle() { return model_; }

 private:
  sagnet::ModelBundle<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "style-randomization training mechanism: core operations";

  m.def(
      "channel_stats",
      [](const DArray& z, double eps) {
        auto t = tensor_from_array(z, "z", 4);
        auto stats = sagnet::channel_stats<double>(nullptr, t, eps);
        return py::make_tuple(array_from_tensor(stats.mu), array_from_tensor(stats.sigma));
      },
      py::arg("z"), py::arg("eps") = 1e-5,
      "Per-channel (mu, sigma) of a [N,D,H,W] feature map; sigma includes the eps floor.");

  m.def(
      "adain",
      [](const DArray& content, const DArray& mu_t, const DArray& sigma_t, double eps) {
        auto c = tensor_from_array(content, "content", 4);
        sagnet::StyleStats<double> target{tensor_from_array(mu_t, "mu_t", 2),
                                          tensor_from_array(sigma_t, "sigma_t", 2)};
        return array_from_tensor(sagnet::adain<double>(nullptr, c, target, eps));
      },
      py::arg("content"), py::arg("mu_t"), py::arg("sigma_t"), py::arg("eps") = 1e-5);

  m.def(
      "style_randomize",
      [](const DArray& z, const DArray& z_prime, const std::vector<double>& alpha, double eps) {
        auto a = tensor_from_array(z, "z", 4);
        auto b = tensor_from_array(z_prime, "z_prime", 4);
        return array_from_tensor(sagnet::style_randomize<double>(nullptr, a, b, alpha, eps));
      },
      py::arg("z"), py::arg("z_prime"), py::arg("alpha"), py::arg("eps") = 1e-5);

  m.def(
      "content_randomize",
      [](const DArray& z, const DArray& z_prime, double eps) {
        auto a = tensor_from_array(z, "z", 4);
        auto b = tensor_from_array(z_prime, "z_prime", 4);
        return array_from_tensor(sagnet::content_randomize<double>(nullptr, a, b, eps));
      },
      py::arg("z"), py::arg("z_prime"), py::arg("eps") = 1e-5);

  m.def(
      "batch_shuffle",
      [](const DArray& z, std::uint64_t seed) {
        auto t = tensor_from_array(z, "z", 4);
        sagnet::Rng rng(seed);
        auto r = sagnet::batch_shuffle<double>(nullptr, t, rng);
        return py::make_tuple(array_from_tensor(r.tensor), r.permutation);
      },
      py::arg("z"), py::arg("seed") = 0);

  m.def(
      "make_holdout",
      [](const py::dict& spec, int target_domain) {
        auto st = sagnet::holdout_domain(spec_from_dict(spec), target_domain);
        py::dict d;
        d["source_train"] = dict_from_image_set(st.source_train);
        d["source_val"] = dict_from_image_set(st.source_val);
        d["target_eval"] = dict_from_image_set(st.target_eval);
        d["target_unlabeled"] = dict_from_image_set(st.target_unlabeled);
        return d;
      },
      py::arg("spec") = py::dict(), py::arg("target_domain") = 3);

  m.def(
      "make_cue_conflict",
      [](const py::dict& spec, int n_per_pair) {
        return dict_from_image_set(sagnet::generate_cue_conflict(spec_from_dict(spec), n_per_pair));
      },
      py::arg("spec") = py::dict(), py::arg("n_per_pair") = 1);

  m.def(
      "proxy_a_distance",
      [](const DArray& a, const DArray& b, std::uint64_t seed) {
        auto pack = [](const DArray& arr) {
          py::buffer_info info = arr.request();
          if (info.ndim != 2) throw std::invalid_argument("features must be 2-D");
          sagnet::FeatureMatrix fm;
          fm.n = static_cast<int>(info.shape[0]);
          fm.dim = static_cast<int>(info.shape[1]);
          const double* src = static_cast<const double*>(info.ptr);
          fm.data.assign(src, src + static_cast<std::size_t>(fm.n) * fm.dim);
          return fm;
        };
        sagnet::Rng rng(seed);
        auto rep = sagnet::proxy_a_distance(pack(a), pack(b), rng);
        py::dict d;
        d["d_a"] = rep.d_a;
        d["epsilon"] = rep.epsilon;
        d["folds"] = rep.folds;
        return d;
      },
      py::arg("features_a"), py::arg("features_b"), py::arg("seed") = 0);

  py::class_<PyModel>(m, "Model")
      .def("predict_logp", &PyModel::predict_logp, py::arg("images"))
      .def("inference_param_count", &PyModel::inference_param_count)
      .def("total_param_count", &PyModel::total_param_count)
      .def("inference_multiplies", &PyModel::inference_multiplies)
      .def("save", &PyModel::save, py::arg("path"));

  m.def(
      "load_model",
      [](const std::string& path) { return PyModel(sagnet::load_checkpoint(path).model); },
      py::arg("path"));

  m.def(
      "run_training_cell",
      [](const py::dict& spec, const py::dict& net, const py::dict& train, const std::string& variant,
         double lambda_adv, int target_domain, bool use_unlabeled, std::uint64_t seed) {
        sagnet::ExperimentPlan plan;
        plan.data_spec = spec_from_dict(spec);
        plan.net = net_from_dict(net);
        plan.train_base = train_from_dict(train);
        plan.stimuli_per_pair = 4;
        sagnet::Cell cell;
        cell.id = "py:" + variant + ":seed" + std::to_string(seed);
        cell.kind = sagnet::PlanKind::multi_source_dg;
        cell.variant = sagnet::variant_from_string(variant);
        cell.lambda_adv = lambda_adv;
        cell.stage = plan.net.randomization_stage;
        cell.seed = seed;
        cell.target_domain = target_domain;
        cell.use_unlabeled = use_unlabeled;
        auto result = sagnet::run_cell(plan, cell, "");
        return py::make_tuple(dict_from_record(result.record), PyModel(std::move(result.model)));
      },
      py::arg("spec") = py::dict(), py::arg("net") = py::dict(), py::arg("train") = py::dict(),
      py::arg("variant") = "full", py::arg("lambda_adv") = 0.1, py::arg("target_domain") = 3,
      py::arg("use_unlabeled") = false, py::arg("seed") = 1,
      "Generate data, train one cell, and return (metrics record, model).");
}
