#pragma once

// Minimal recurrent building blocks with hand-written backpropagation. Both
// learned models in the library (speaker encoder, landmark animator) are an
// Elman layer followed by a dense readout.

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include <json.hpp>

#include "forge/rng.hpp"

namespace forge::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// h_t = tanh(W_in x_t + W_rec h_{t-1} + b), h_{-1} = 0. Inputs and hidden
// states are stored one time step per row.
struct ElmanLayer {
  Matrix w_in;   // hidden x input
  Matrix w_rec;  // hidden x hidden
  Matrix bias;   // hidden x 1

  static ElmanLayer init(Eigen::Index inputs, Eigen::Index hidden, Rng& rng);
  static ElmanLayer zeros_like(const ElmanLayer& other);

  Eigen::Index inputs() const { return w_in.cols(); }
  Eigen::Index hidden() const { return w_in.rows(); }

  Matrix forward(const Matrix& x) const;
  // Accumulates parameter gradients into grad. d_hidden holds dL/dh_t as
  // seen from outside the recurrence.
  void backward(const Matrix& x, const Matrix& h, const Matrix& d_hidden, ElmanLayer& grad) const;
};

// y = W x + b, one row per time step on both sides.
struct Dense {
  Matrix weight;  // outputs x inputs
  Matrix bias;    // outputs x 1

  static Dense init(Eigen::Index inputs, Eigen::Index outputs, Rng& rng);
  static Dense zeros_like(const Dense& other);

  Matrix forward(const Matrix& x) const;
  // Returns dL/dx and accumulates parameter gradients.
  Matrix backward(const Matrix& x, const Matrix& d_out, Dense& grad) const;
};

// Visits every parameter block of a model, paired with the same block of a
// second model (typically its gradient).
using BlockVisitor = std::function<void(Matrix& param, Matrix& other)>;

void visit(ElmanLayer& a, ElmanLayer& b, const BlockVisitor& f);
void visit(Dense& a, Dense& b, const BlockVisitor& f);

// Scales grad blocks so their joint L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_norm(std::vector<Matrix*> grads, double max_norm);

// Adam over a fixed list of parameter blocks; grads must match in order
// and shape on every step.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Matrix*> params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step(const std::vector<Matrix*>& grads);

 private:
  std::vector<Matrix*> params_;
  std::vector<Matrix> m_, v_;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

nlohmann::json to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace forge::nn
