#pragma once

#include "f2d2/model/flow_map.hpp"

#include <Eigen/Dense>

namespace f2d2::model {

/// Values and directional derivatives of both heads along (dx, dt, ds).
struct JointJvp {
  Matrix u, D;
  Matrix du, dD;
};

/// One forward-mode pass of `map` at (x, t, s) with tangents (dx, dt, ds).
/// No gradients are recorded.
JointJvp joint_jvp(const JointFlowMap& map, const Matrix& x, const Matrix& t, const Matrix& s,
                   const Matrix& dx, const Matrix& dt, const Matrix& ds);

/// Per-row divergence of a velocity field at (x, t) by exact trace.
Eigen::VectorXd velocity_divergence(const VelocityField& field, const Matrix& x, const Matrix& t);

/// Per-sample residual norms of the three flow-map conditions, each combining
/// the X and Z components as sqrt(|r_X|^2 + r_Z^2).
///
///  lagrangian : d/ds Phi(x,t,s) - F(Phi(x,t,s), s)
///  eulerian   : d/dt Phi(x,t,s) + grad_x Phi(x,t,s) . F(x, t)
///  semigroup  : Phi(x,t,s) - Phi(Phi(x,t,r), r, s) with r = (t + s) / 2
///
/// where F = (v, -div v) is the joint vector field of the reference velocity.
struct FlowMapResiduals {
  Eigen::VectorXd lagrangian;
  Eigen::VectorXd eulerian;
  Eigen::VectorXd semigroup;
};

FlowMapResiduals flowmap_residuals(const JointFlowMap& map, const Matrix& x, const Matrix& t,
                                   const Matrix& s, const VelocityField& v_ref);

/// The X-component Eulerian residual computed by a JVP of Phi_X, and the
/// MeanFlow-identity residual u - v - (s - t)(d_t u + grad_x u . v) computed by
/// a separate JVP of u. For any differentiable map the first equals minus the
/// second.
struct EulerianMeanFlowPair {
  Matrix eulerian;
  Matrix meanflow;
};

EulerianMeanFlowPair eulerian_meanflow_pair(const JointFlowMap& map, const Matrix& x, const Matrix& t,
                                            const Matrix& s, const VelocityField& v_ref);

double median(Eigen::VectorXd values);

}  // namespace f2d2::model
