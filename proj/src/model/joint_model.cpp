#include "f2d2/model/joint_model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace f2d2::model {

std::string to_string(Activation a) { return a == Activation::kGelu ? "gelu" : "silu"; }
std::string to_string(TimeEmbedding e) { return e == TimeEmbedding::kRaw ? "raw" : "sinusoidal"; }

Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::kGelu;
  if (s == "silu") return Activation::kSilu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

TimeEmbedding parse_time_embedding(const std::string& s) {
  if (s == "raw") return TimeEmbedding::kRaw;
  if (s == "sinusoidal") return TimeEmbedding::kSinusoidal;
  throw std::invalid_argument("unknown time embedding '" + s + "'");
}

int Architecture::input_width() const {
  if (time_embedding == TimeEmbedding::kRaw) return data_dim + 2;
  return data_dim + 4 * embedding_frequencies;
}

namespace {

void init_linear(std::vector<Tensor>& params, int in, int out, RngStream& rng, bool zero) {
  Matrix w(in, out);
  Matrix b(1, out);
  if (zero) {
    w.setZero();
    b.setZero();
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    rng.fill_uniform(w, -bound, bound);
    rng.fill_uniform(b, -bound, bound);
  }
  params.push_back(Tensor::parameter(std::move(w)));
  params.push_back(Tensor::parameter(std::move(b)));
}

}  // namespace

JointFlowMapModel::JointFlowMapModel(Architecture arch, RngStream& init_rng) : arch_(std::move(arch)) {
  if (arch_.data_dim < 1 || arch_.hidden_width < 1 || arch_.hidden_layers < 1) {
    throw std::invalid_argument("architecture: dimensions must be positive");
  }
  if (!(arch_.div_scale > 0.0) || !std::isfinite(arch_.div_scale)) {
    throw std::invalid_argument("architecture: div_scale must be positive");
  }
  int in = arch_.input_width();
  for (int l = 0; l < arch_.hidden_layers; ++l) {
    init_linear(params_, in, arch_.hidden_width, init_rng, false);
    in = arch_.hidden_width;
  }
  init_linear(params_, arch_.hidden_width, arch_.data_dim, init_rng, arch_.zero_init_heads);
  in = arch_.hidden_width;
  for (int h : arch_.div_head_hidden) {
    if (h < 1) throw std::invalid_argument("architecture: divergence head widths must be positive");
    init_linear(params_, in, h, init_rng, false);
    in = h;
  }
  init_linear(params_, in, 1, init_rng, arch_.zero_init_heads);
}

std::vector<std::string> JointFlowMapModel::parameter_names() const {
  std::vector<std::string> names;
  for (int l = 0; l < arch_.hidden_layers; ++l) {
    names.push_back("trunk." + std::to_string(l) + ".weight");
    names.push_back("trunk." + std::to_string(l) + ".bias");
  }
  names.push_back("velocity_head.weight");
  names.push_back("velocity_head.bias");
  const auto n = arch_.div_head_hidden.size();
  for (std::size_t l = 0; l <= n; ++l) {
    names.push_back("divergence_head." + std::to_string(l) + ".weight");
    names.push_back("divergence_head." + std::to_string(l) + ".bias");
  }
  return names;
}

Eigen::Index JointFlowMapModel::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

Eigen::VectorXd JointFlowMapModel::flat_parameters() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index at = 0;
  for (const auto& p : params_) {
    flat.segment(at, p.size()) = Eigen::Map<const Eigen::VectorXd>(p.value().data(), p.size());
    at += p.size();
  }
  return flat;
}

void JointFlowMapModel::set_flat_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != parameter_count()) {
    throw std::invalid_argument("set_flat_parameters: expected " + std::to_string(parameter_count()) +
                                " values, got " + std::to_string(flat.size()));
  }
  Eigen::Index at = 0;
  for (auto& p : params_) {
    Matrix& m = p.mutable_value();
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = flat.segment(at, m.size());
    at += m.size();
  }
}

void JointFlowMapModel::set_parameters(const std::vector<Matrix>& values) {
  if (values.size() != params_.size()) throw std::invalid_argument("set_parameters: count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].rows() != params_[i].rows() || values[i].cols() != params_[i].cols()) {
      throw std::invalid_argument("set_parameters: shape mismatch");
    }
    params_[i].mutable_value() = values[i];
  }
}

JointFlowMapModel JointFlowMapModel::clone() const {
  JointFlowMapModel copy;
  copy.arch_ = arch_;
  copy.divergence_trained_ = divergence_trained_;
  copy.params_.reserve(params_.size());
  for (const auto& p : params_) copy.params_.push_back(Tensor::parameter(p.value()));
  return copy;
}

Tensor JointFlowMapModel::activate(const Tensor& h) const {
  return arch_.activation == Activation::kGelu ? ad::gelu(h) : ad::silu(h);
}

Tensor JointFlowMapModel::embed(const Tensor& x, const Tensor& t, const Tensor& s) const {
  const Tensor gap = s - t;
  if (arch_.time_embedding == TimeEmbedding::kRaw) return ad::concat_cols({x, t, gap});
  std::vector<Tensor> parts{x};
  for (const Tensor* time : {&t, &gap}) {
    for (int k = 0; k < arch_.embedding_frequencies; ++k) {
      const Tensor phase = ad::scale(*time, std::numbers::pi * std::ldexp(1.0, k));
      parts.push_back(ad::sin(phase));
      parts.push_back(ad::cos(phase));
    }
  }
  return ad::concat_cols(parts);
}

JointOutput JointFlowMapModel::do_forward(const Tensor& x, const Tensor& t, const Tensor& s) const {
  if (x.cols() != arch_.data_dim) throw ad::ContractViolation("model input has the wrong dimension");
  if (t.rows() != x.rows() || s.rows() != x.rows() || t.cols() != 1 || s.cols() != 1) {
    throw ad::ContractViolation("time inputs must be n x 1 columns matching x");
  }
  if (!x.value().allFinite() || !t.value().allFinite() || !s.value().allFinite()) {
    throw ad::ContractViolation("non-finite model input");
  }
  std::size_t p = 0;
  Tensor h = embed(x, t, s);
  for (int l = 0; l < arch_.hidden_layers; ++l, p += 2) {
    h = activate(ad::linear(h, params_[p], params_[p + 1]));
  }
  JointOutput out;
  out.u = ad::linear(h, params_[p], params_[p + 1]);
  p += 2;
  Tensor g = h;
  for (std::size_t l = 0; l < arch_.div_head_hidden.size(); ++l, p += 2) {
    g = ad::silu(ad::linear(g, params_[p], params_[p + 1]));
  }
  out.d_head = ad::linear(g, params_[p], params_[p + 1]);
  out.D = arch_.div_scale == 1.0 ? out.d_head : ad::scale(out.d_head, 1.0 / arch_.div_scale);
  return out;
}

Tensor flow_map_apply(const JointFlowMap& map, const Tensor& x, const Tensor& t, const Tensor& s) {
  const JointOutput out = map.forward(x, t, s);
  return x + (s - t) * out.u;
}

Tensor logdensity_map_apply(const JointFlowMap& map, const Tensor& x, const Tensor& z, const Tensor& t,
                            const Tensor& s) {
  const JointOutput out = map.forward(x, t, s);
  return z + (s - t) * out.D;
}

}  // namespace f2d2::model
