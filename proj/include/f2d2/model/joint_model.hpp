#pragma once

#include "f2d2/model/flow_map.hpp"
#include "f2d2/rng.hpp"

#include <string>
#include <vector>

namespace f2d2::model {

enum class Activation { kGelu, kSilu };
enum class TimeEmbedding { kRaw, kSinusoidal };

std::string to_string(Activation a);
std::string to_string(TimeEmbedding e);
Activation parse_activation(const std::string& s);
TimeEmbedding parse_time_embedding(const std::string& s);

struct Architecture {
  int data_dim = 2;
  int hidden_width = 256;
  int hidden_layers = 4;
  Activation activation = Activation::kGelu;
  /// Hidden widths of the divergence head (SiLU), before the scalar output.
  std::vector<int> div_head_hidden = {64};
  TimeEmbedding time_embedding = TimeEmbedding::kRaw;
  int embedding_frequencies = 8;
  double div_scale = 1.0;
  /// Final layers of both heads start at zero, so the initial map is the
  /// identity in x and constant in z.
  bool zero_init_heads = true;

  int input_width() const;
  bool operator==(const Architecture&) const = default;
};

/// Shared MLP trunk on (x, t, s - t) with a linear velocity head and a small
/// MLP divergence head.
class JointFlowMapModel final : public JointFlowMap {
 public:
  JointFlowMapModel(Architecture arch, RngStream& init_rng);

  int dim() const override { return arch_.data_dim; }
  double div_scale() const override { return arch_.div_scale; }
  const Architecture& architecture() const { return arch_; }

  /// Trunk layers, then velocity head, then divergence head; weights (in x out)
  /// precede biases (1 x out) within each layer.
  const std::vector<Tensor>& parameters() const { return params_; }
  std::vector<Tensor>& parameters() { return params_; }
  std::vector<std::string> parameter_names() const;
  Eigen::Index parameter_count() const;

  Eigen::VectorXd flat_parameters() const;
  void set_flat_parameters(const Eigen::VectorXd& flat);
  void set_parameters(const std::vector<Matrix>& values);

  /// Deep copy with independent parameter storage.
  JointFlowMapModel clone() const;

  /// Set once a stage has trained the divergence head.
  bool divergence_trained() const { return divergence_trained_; }
  void set_divergence_trained(bool v) { divergence_trained_ = v; }

 protected:
  JointOutput do_forward(const Tensor& x, const Tensor& t, const Tensor& s) const override;

 private:
  JointFlowMapModel() = default;
  Tensor embed(const Tensor& x, const Tensor& t, const Tensor& s) const;
  Tensor activate(const Tensor& h) const;

  Architecture arch_;
  std::vector<Tensor> params_;
  bool divergence_trained_ = false;
};

}  // namespace f2d2::model
