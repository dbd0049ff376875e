#include "forge/nn.hpp"

#include <cmath>

#include "forge/error.hpp"

namespace forge::nn {
namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * rng.normal();
  return m;
}

}  // namespace

ElmanLayer ElmanLayer::init(Eigen::Index inputs, Eigen::Index hidden, Rng& rng) {
  ElmanLayer l;
  l.w_in = gaussian(hidden, inputs, 1.0 / std::sqrt(static_cast<double>(inputs)), rng);
  l.w_rec = gaussian(hidden, hidden, 0.5 / std::sqrt(static_cast<double>(hidden)), rng);
  l.bias = Matrix::Zero(hidden, 1);
  return l;
}

ElmanLayer ElmanLayer::zeros_like(const ElmanLayer& o) {
  return {Matrix::Zero(o.w_in.rows(), o.w_in.cols()), Matrix::Zero(o.w_rec.rows(), o.w_rec.cols()),
          Matrix::Zero(o.bias.rows(), 1)};
}

Matrix ElmanLayer::forward(const Matrix& x) const {
  const Eigen::Index steps = x.rows();
  // Input projection for all steps at once, then the recurrence.
  Matrix pre = x * w_in.transpose();
  pre.rowwise() += bias.col(0).transpose();
  Matrix h(steps, hidden());
  Vector prev = Vector::Zero(hidden());
  for (Eigen::Index t = 0; t < steps; ++t) {
    Vector a = pre.row(t).transpose() + w_rec * prev;
    prev = a.array().tanh();
    h.row(t) = prev.transpose();
  }
  return h;
}

void ElmanLayer::backward(const Matrix& x, const Matrix& h, const Matrix& d_hidden,
                          ElmanLayer& grad) const {
  const Eigen::Index steps = x.rows();
  Matrix d_pre(steps, hidden());
  Vector carry = Vector::Zero(hidden());
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    Vector dh = d_hidden.row(t).transpose() + carry;
    Vector da = dh.array() * (1.0 - h.row(t).transpose().array().square());
    d_pre.row(t) = da.transpose();
    carry = w_rec.transpose() * da;
  }
  grad.w_in.noalias() += d_pre.transpose() * x;
  if (steps > 1)
    grad.w_rec.noalias() += d_pre.bottomRows(steps - 1).transpose() * h.topRows(steps - 1);
  grad.bias.col(0) += d_pre.colwise().sum().transpose();
}

Dense Dense::init(Eigen::Index inputs, Eigen::Index outputs, Rng& rng) {
  return {gaussian(outputs, inputs, 1.0 / std::sqrt(static_cast<double>(inputs)), rng),
          Matrix::Zero(outputs, 1)};
}

Dense Dense::zeros_like(const Dense& o) {
  return {Matrix::Zero(o.weight.rows(), o.weight.cols()), Matrix::Zero(o.bias.rows(), 1)};
}

Matrix Dense::forward(const Matrix& x) const {
  Matrix y = x * weight.transpose();
  y.rowwise() += bias.col(0).transpose();
  return y;
}

Matrix Dense::backward(const Matrix& x, const Matrix& d_out, Dense& grad) const {
  grad.weight.noalias() += d_out.transpose() * x;
  grad.bias.col(0) += d_out.colwise().sum().transpose();
  return d_out * weight;
}

void visit(ElmanLayer& a, ElmanLayer& b, const BlockVisitor& f) {
  f(a.w_in, b.w_in);
  f(a.w_rec, b.w_rec);
  f(a.bias, b.bias);
}

void visit(Dense& a, Dense& b, const BlockVisitor& f) {
  f(a.weight, b.weight);
  f(a.bias, b.bias);
}

double clip_norm(std::vector<Matrix*> grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix* g : grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0)
    for (Matrix* g : grads) *g *= max_norm / norm;
  return norm;
}

Adam::Adam(std::vector<Matrix*> params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Matrix* p : params_) {
    m_.push_back(Matrix::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

void Adam::step(const std::vector<Matrix*>& grads) {
  if (grads.size() != params_.size()) throw ValidationError("Adam: gradient block count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Matrix& g = *grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    params_[i]->array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

nlohmann::json to_json(const Matrix& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  j["data"] = std::move(data);
  return j;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols))
    throw FormatError("matrix size does not match its data");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

}  // namespace forge::nn
