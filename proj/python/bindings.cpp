#include "f2d2/data/density.hpp"
#include "f2d2/eval/metrics.hpp"
#include "f2d2/harness/commands.hpp"
#include "f2d2/model/checkpoint.hpp"
#include "f2d2/model/joint_model.hpp"
#include "f2d2/model/oracles.hpp"
#include "f2d2/model/residuals.hpp"
#include "f2d2/sampling/guidance.hpp"
#include "f2d2/sampling/likelihood.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <iostream>
#include <sstream>

namespace py = pybind11;
using namespace f2d2;
using Matrix = Eigen::MatrixXd;

namespace {

py::dict report_dict(const sampling::LikelihoodReport& r) {
  py::dict d;
  d["mode"] = sampling::to_string(r.mode);
  d["x0"] = r.x0;
  d["base_logpdf"] = r.base_logpdf;
  d["log_density"] = r.log_density;
  d["bpd"] = r.bpd;
  d["nfe"] = r.nfe;
  return d;
}

}  // namespace

PYBIND11_MODULE(_f2d2, m) {
  m.doc() = "Joint flow-map and log-density distillation (C++ core)";

  py::class_<RngStream>(m, "RngStream")
      .def(py::init<std::uint64_t, std::uint64_t>(), py::arg("key"), py::arg("position") = 0)
      .def_static("named", &RngStream::named, py::arg("seed"), py::arg("name"))
      .def_property_readonly("key", &RngStream::key)
      .def_property_readonly("position", &RngStream::position)
      .def("uniform", py::overload_cast<>(&RngStream::uniform))
      .def("normal", &RngStream::normal)
      .def("normal_matrix", [](RngStream& rng, Eigen::Index rows, Eigen::Index cols) {
        Matrix out(rows, cols);
        rng.fill_normal(out);
        return out;
      });

  py::class_<data::Density>(m, "Density")
      .def_static("checkerboard", &data::Density::checkerboard)
      .def_static("standard_gaussian", &data::Density::standard_gaussian, py::arg("dim") = 2)
      .def_property_readonly("dim", &data::Density::dim)
      .def_property_readonly("kind", &data::Density::kind)
      .def("sample", &data::Density::sample, py::arg("rng"), py::arg("n"))
      .def("logpdf", py::overload_cast<const Matrix&>(&data::Density::logpdf, py::const_), py::arg("points"));
  m.def("gaussian_logpdf", py::overload_cast<const Matrix&>(&data::gaussian_logpdf), py::arg("points"));

  py::class_<model::Architecture>(m, "Architecture")
      .def(py::init<>())
      .def_readwrite("data_dim", &model::Architecture::data_dim)
      .def_readwrite("hidden_width", &model::Architecture::hidden_width)
      .def_readwrite("hidden_layers", &model::Architecture::hidden_layers)
      .def_readwrite("div_head_hidden", &model::Architecture::div_head_hidden)
      .def_readwrite("div_scale", &model::Architecture::div_scale)
      .def_readwrite("zero_init_heads", &model::Architecture::zero_init_heads);

  py::class_<model::JointFlowMap>(m, "JointFlowMap")
      .def_property_readonly("dim", &model::JointFlowMap::dim)
      .def(
          "forward",
          [](const model::JointFlowMap& map, const Matrix& x, double t, double s) {
            ad::NoGradGuard no_grad;
            const auto out = map.forward(ad::Tensor(x), model::time_column(x.rows(), t), model::time_column(x.rows(), s));
            return py::make_tuple(out.u.value(), out.D.value());
          },
          py::arg("x"), py::arg("t"), py::arg("s"), "Returns (u, D) at scalar times t and s.")
      .def(
          "flow",
          [](const model::JointFlowMap& map, const Matrix& x, double t, double s) {
            ad::NoGradGuard no_grad;
            return model::flow_map_apply(map, ad::Tensor(x), model::time_column(x.rows(), t),
                                         model::time_column(x.rows(), s)).value();
          },
          py::arg("x"), py::arg("t"), py::arg("s"));

  py::class_<model::JointFlowMapModel, model::JointFlowMap>(m, "JointFlowMapModel")
      .def(py::init<model::Architecture, RngStream&>(), py::arg("architecture"), py::arg("init_rng"))
      .def_property_readonly("parameter_count", &model::JointFlowMapModel::parameter_count)
      .def_property_readonly("divergence_trained", &model::JointFlowMapModel::divergence_trained)
      .def("flat_parameters", &model::JointFlowMapModel::flat_parameters)
      .def("save", [](const model::JointFlowMapModel& net, const std::filesystem::path& path, const std::string& stage) {
        model::save_checkpoint(model::Checkpoint::from_model(net, stage, 0), path);
      }, py::arg("path"), py::arg("stage") = "python");
  m.def("load_model", [](const std::filesystem::path& p) { return model::load_checkpoint(p).to_model(); },
        py::arg("path"), "Loads a model from a checkpoint file.");

  py::class_<oracle::LinearFlowMap, model::JointFlowMap>(m, "LinearFlowMap")
      .def(py::init<int>(), py::arg("dim") = 2);
  m.def("linear_flow_logp1", &oracle::linear_flow_logp1, py::arg("x1"),
        "Closed-form log p_1 for v(x, t) = x with a standard normal base.");

  m.def("euler_sample", [](const model::JointFlowMap& map, const Matrix& x0, int k) {
    return sampling::euler_sample(map, x0, k).back();
  }, py::arg("map"), py::arg("x0"), py::arg("k"));
  m.def("likelihood_fewstep", [](const model::JointFlowMap& map, const Matrix& x1, int k) {
    return report_dict(sampling::likelihood_fewstep(map, x1, k));
  }, py::arg("map"), py::arg("x1"), py::arg("k"));
  m.def("likelihood_reference_diagonal", [](const model::JointFlowMap& map, const Matrix& x1, int n_steps) {
    const model::DiagonalVelocity v(map);
    return report_dict(sampling::likelihood_reference(v, x1, n_steps));
  }, py::arg("map"), py::arg("x1"), py::arg("n_steps"),
        "Reference integration of the model's own instantaneous velocity with exact traces.");
  m.def("likelihood_reference_linear", [](const Matrix& x1, int n_steps) {
    const oracle::LinearVelocity v(static_cast<int>(x1.cols()));
    return report_dict(sampling::likelihood_reference(v, x1, n_steps));
  }, py::arg("x1"), py::arg("n_steps"));

  m.def("surrogate_nll", &sampling::surrogate_nll, py::arg("map"), py::arg("x0"));
  m.def("guide", [](const model::JointFlowMap& map, const Matrix& x0, int steps, std::optional<double> lr, int k_samp) {
    sampling::GuidanceConfig cfg;
    cfg.steps = steps;
    cfg.lr = lr;
    cfg.k_samp = k_samp;
    const auto g = sampling::guide_from(map, x0, cfg);
    py::dict d;
    d["x0"] = g.x0;
    d["samples"] = g.samples;
    d["surrogate_trace"] = g.surrogate_trace;
    d["nfe"] = g.nfe;
    return d;
  }, py::arg("map"), py::arg("x0"), py::arg("steps") = 1, py::arg("lr") = py::none(), py::arg("k_samp") = 1);

  m.def("flowmap_residuals", [](const model::JointFlowMap& map, const Matrix& x, const Matrix& t, const Matrix& s) {
    const model::DiagonalVelocity v(map);
    const auto r = model::flowmap_residuals(map, x, t, s, v);
    return py::make_tuple(r.lagrangian, r.eulerian, r.semigroup);
  }, py::arg("map"), py::arg("x"), py::arg("t"), py::arg("s"),
        "Per-sample (lagrangian, eulerian, semigroup) residuals with the model's own diagonal as reference.");

  m.def("energy_distance", [](const Matrix& a, const Matrix& b, bool unbiased) {
    return eval::energy_distance(a, b, unbiased ? eval::EnergyEstimator::kUStatistic : eval::EnergyEstimator::kVStatistic);
  }, py::arg("a"), py::arg("b"), py::arg("unbiased") = false);

  m.def("train", [](const std::filesystem::path& config, std::optional<std::uint64_t> seed,
                    std::optional<std::filesystem::path> out) {
    harness::CommonOptions opts{config, seed, out};
    std::ostringstream log, err;
    const int code = harness::cmd_train(opts, log, err);
    return py::make_tuple(code, log.str(), err.str());
  }, py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none(),
        "Runs `f2d2 train`; returns (exit_code, log, errors).");
}
