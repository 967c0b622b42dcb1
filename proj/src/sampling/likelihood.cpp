#include "f2d2/sampling/likelihood.hpp"

#include "f2d2/data/density.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>

namespace f2d2::sampling {

namespace {

void check_finite(const Matrix& x, const LikelihoodReport& partial, int step, const char* what) {
  if (!x.allFinite()) {
    throw NonFiniteState(std::string(what) + ": non-finite state after step " + std::to_string(step),
                         partial, step);
  }
}

void finish(LikelihoodReport& report, const Matrix& x0) {
  report.x0 = x0;
  report.base_logpdf = data::gaussian_logpdf(x0);
  report.log_density = report.base_logpdf;
  for (const auto& st : report.per_step) report.log_density += st.increment;
  report.bpd = -report.log_density / (report.dim * std::numbers::ln2);
}

double grid_time(int i, int k, bool backward) {
  const double frac = static_cast<double>(i) / k;
  return backward ? 1.0 - frac : frac;
}

}  // namespace

std::string to_string(LikelihoodMode m) {
  return m == LikelihoodMode::kFewStepHead ? "fewstep-head" : "reference-integration";
}

double nats_to_bpd(double nll_nats, int dim) {
  if (dim < 1) throw std::invalid_argument("nats_to_bpd: dimension must be at least 1");
  return nll_nats / (dim * std::numbers::ln2);
}

void LikelihoodReport::write_json_lines(std::ostream& out) const {
  for (Eigen::Index i = 0; i < log_density.size(); ++i) {
    nlohmann::json row;
    row["index"] = i;
    row["mode"] = to_string(mode);
    row["log_density"] = log_density[i];
    row["bpd"] = bpd[i];
    row["nfe"] = nfe;
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& st : per_step) steps.push_back({{"t", st.t}, {"s", st.s}, {"increment", st.increment[i]}});
    row["per_step"] = std::move(steps);
    out << row.dump() << '\n';
  }
}

std::vector<Matrix> euler_sample(const JointFlowMap& map, const Matrix& x0, int k) {
  if (k < 1) throw std::invalid_argument("euler_sample: K must be at least 1");
  ad::NoGradGuard no_grad;
  std::vector<Matrix> states{x0};
  const Eigen::Index n = x0.rows();
  for (int i = 0; i < k; ++i) {
    const double t = grid_time(i, k, false);
    const double s = grid_time(i + 1, k, false);
    const model::JointOutput out =
        map.forward(model::Tensor(states.back()), model::time_column(n, t), model::time_column(n, s));
    Matrix next = states.back() + (s - t) * out.u.value();
    if (!next.allFinite()) {
      throw std::runtime_error("euler_sample: non-finite state at step " + std::to_string(i));
    }
    states.push_back(std::move(next));
  }
  return states;
}

LikelihoodReport likelihood_fewstep(const JointFlowMap& map, const Matrix& x1, int k) {
  if (k < 1) throw std::invalid_argument("likelihood_fewstep: K must be at least 1");
  ad::NoGradGuard no_grad;
  LikelihoodReport report;
  report.mode = LikelihoodMode::kFewStepHead;
  report.dim = static_cast<int>(x1.cols());
  const Eigen::Index n = x1.rows();
  Matrix x = x1;
  for (int i = 0; i < k; ++i) {
    const double t = grid_time(i, k, true);
    const double s = grid_time(i + 1, k, true);
    const model::JointOutput out =
        map.forward(model::Tensor(x), model::time_column(n, t), model::time_column(n, s));
    ++report.nfe;
    x += (s - t) * out.u.value();
    report.per_step.push_back({t, s, -(s - t) * out.D.value().col(0)});
    check_finite(x, report, i, "likelihood_fewstep");
  }
  finish(report, x);
  return report;
}

LikelihoodReport likelihood_reference(const VelocityField& field, const Matrix& x1, int n_steps,
                                      TraceMode mode, Integrator integrator, RngStream* rng) {
  if (n_steps < 1) throw std::invalid_argument("likelihood_reference: n_steps must be at least 1");
  LikelihoodReport report;
  report.mode = LikelihoodMode::kReferenceIntegration;
  report.dim = static_cast<int>(x1.cols());
  const Eigen::Index n = x1.rows();

  // Velocity and divergence at (x, t) in one go; the trace passes also yield v.
  auto eval = [&](const Matrix& x, double t) {
    const model::Tensor tt = model::time_column(n, t);
    const ad::TensorFn fn = [&](const model::Tensor& xi) { return field.velocity(xi, tt); };
    ad::TraceResult tr;
    if (mode.kind == TraceMode::Kind::kExact) {
      tr = ad::jacobian_trace_exact(fn, model::Tensor(x));
    } else {
      if (rng == nullptr) throw ad::ContractViolation("likelihood_reference: Hutchinson needs an RNG");
      tr = ad::hutchinson_trace(fn, model::Tensor(x), mode.probes, *rng, mode.probe);
    }
    report.nfe += static_cast<std::uint64_t>(tr.evaluations);
    return tr;
  };

  Matrix x = x1;
  for (int i = 0; i < n_steps; ++i) {
    const double t = grid_time(i, n_steps, true);
    const double s = grid_time(i + 1, n_steps, true);
    const double dt = s - t;
    ad::TraceResult tr;
    if (integrator == Integrator::kEuler) {
      tr = eval(x, t);
    } else {
      Matrix k1;
      {
        ad::NoGradGuard no_grad;
        k1 = field.velocity(model::Tensor(x), model::time_column(n, t)).value();
      }
      ++report.nfe;
      tr = eval(x + 0.5 * dt * k1, t + 0.5 * dt);
    }
    x += dt * tr.value;
    report.per_step.push_back({t, s, dt * tr.trace.col(0)});
    check_finite(x, report, i, "likelihood_reference");
  }
  finish(report, x);
  return report;
}

}  // namespace f2d2::sampling
