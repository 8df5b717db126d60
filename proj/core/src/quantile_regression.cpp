#include "cpmda/quantile_regression.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cpmda {

double pinball_loss(double y, double yhat, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw std::invalid_argument("pinball_loss: tau must lie in (0,1)");
  }
  const double u = y - yhat;
  return u >= 0.0 ? tau * u : (tau - 1.0) * u;
}

Eigen::VectorXd featurize_with_mask(const Imputer& imputer, const Eigen::VectorXd& row,
                                    const MaskPattern& m) {
  const int d = imputer.dimension();
  if (row.size() != d || m.dimension() != d) {
    throw std::invalid_argument("featurize_with_mask: dimension mismatch");
  }
  Eigen::VectorXd features(2 * d);
  features.head(d) = imputer.impute(row, m);
  for (int j = 0; j < d; ++j) features(d + j) = m.missing(j) ? 1.0 : 0.0;
  return features;
}

namespace {

void check_fit_inputs(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double tau) {
  if (x.rows() != y.size()) throw std::invalid_argument("QuantileModel::fit: row count mismatch");
  if (x.rows() < 2) throw std::invalid_argument("QuantileModel::fit: need at least 2 rows");
  if (!(tau > 0.0 && tau < 1.0)) {
    throw std::invalid_argument("QuantileModel::fit: tau must lie in (0,1)");
  }
}

// IRLS on the smoothed pinball objective
//   sum_i a_i * sqrt(r_i^2 + eps^2),  a_i = tau if r_i >= 0 else 1 - tau,
// annealing eps from 1e-2 down to 1e-8. Each stage solves reweighted least
// squares until the parameters stall.
void fit_linear_irls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double tau,
                     Eigen::VectorXd& weights, double& intercept) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());

  Eigen::MatrixXd design(n, p + 1);
  design.leftCols(p) = x;
  design.col(p).setOnes();

  // Start from the least-squares fit.
  Eigen::MatrixXd gram0 = design.transpose() * design;
  gram0.diagonal().array() += 1e-8 * (1.0 + gram0.diagonal().maxCoeff());
  Eigen::VectorXd params = gram0.ldlt().solve(design.transpose() * y);

  const double y_scale = std::max(1.0, y.cwiseAbs().maxCoeff());
  for (double eps = 1e-2; eps >= 0.99e-8; eps *= 0.1) {
    const double stage_eps = eps * y_scale;
    for (int iter = 0; iter < 100; ++iter) {
      Eigen::VectorXd residual = y - design * params;
      Eigen::VectorXd w(n);
      for (int i = 0; i < n; ++i) {
        const double a = residual(i) >= 0.0 ? tau : 1.0 - tau;
        w(i) = a / std::sqrt(residual(i) * residual(i) + stage_eps * stage_eps);
      }
      Eigen::MatrixXd wx = design.array().colwise() * w.array();
      Eigen::MatrixXd gram = wx.transpose() * design;
      gram.diagonal().array() += 1e-12 * (1.0 + gram.diagonal().maxCoeff());
      Eigen::VectorXd next = gram.ldlt().solve(wx.transpose() * y);
      const double step = (next - params).cwiseAbs().maxCoeff();
      params = next;
      if (step < 1e-11 * y_scale) break;
    }
  }
  weights = params.head(p);
  intercept = params(p);
}

struct MlpState {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
};

MlpState init_mlp(int in_dim, int hidden, std::mt19937_64& rng) {
  MlpState s;
  const std::vector<std::pair<int, int>> shapes = {{hidden, in_dim}, {hidden, hidden}, {1, hidden}};
  for (const auto& [rows, cols] : shapes) {
    const double bound = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> unif(-bound, bound);
    Eigen::MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) w(r, c) = unif(rng);
    }
    s.w.push_back(std::move(w));
    s.b.push_back(Eigen::VectorXd::Zero(rows));
  }
  return s;
}

double mlp_forward(const MlpState& s, const Eigen::VectorXd& input) {
  Eigen::VectorXd h1 = (s.w[0] * input + s.b[0]).cwiseMax(0.0);
  Eigen::VectorXd h2 = (s.w[1] * h1 + s.b[1]).cwiseMax(0.0);
  return (s.w[2] * h2 + s.b[2])(0);
}

double holdout_pinball(const MlpState& s, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       const std::vector<int>& rows, double tau) {
  double total = 0.0;
  for (int i : rows) total += pinball_loss(y(i), mlp_forward(s, x.row(i)), tau);
  return total / rows.size();
}

// Adam on the pinball loss with dropout on both hidden layers; the returned
// state is the snapshot with the best hold-out loss.
MlpState fit_mlp(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double tau,
                 const QrHyper& hyper) {
  const int n = static_cast<int>(x.rows());
  const int in_dim = static_cast<int>(x.cols());
  std::mt19937_64 rng(hyper.seed ^ 0x51f3a9c2d4e8b760ULL);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  int n_holdout = std::max(1, static_cast<int>(std::lround(hyper.holdout_fraction * n)));
  if (n_holdout >= n) n_holdout = n - 1;
  std::vector<int> holdout(order.begin(), order.begin() + n_holdout);
  std::vector<int> train(order.begin() + n_holdout, order.end());

  MlpState s = init_mlp(in_dim, hyper.hidden_dim, rng);
  MlpState best = s;
  double best_loss = holdout_pinball(s, x, y, holdout, tau);

  MlpState m_avg, v_avg;  // Adam moments
  for (size_t l = 0; l < s.w.size(); ++l) {
    m_avg.w.push_back(Eigen::MatrixXd::Zero(s.w[l].rows(), s.w[l].cols()));
    v_avg.w.push_back(Eigen::MatrixXd::Zero(s.w[l].rows(), s.w[l].cols()));
    m_avg.b.push_back(Eigen::VectorXd::Zero(s.b[l].size()));
    v_avg.b.push_back(Eigen::VectorXd::Zero(s.b[l].size()));
  }
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  long step = 0;

  const int batch = std::max(1, std::min<int>(hyper.batch_size, static_cast<int>(train.size())));
  for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (size_t start = 0; start < train.size(); start += batch) {
      const size_t stop = std::min(train.size(), start + batch);
      MlpState grad;
      for (size_t l = 0; l < s.w.size(); ++l) {
        grad.w.push_back(Eigen::MatrixXd::Zero(s.w[l].rows(), s.w[l].cols()));
        grad.b.push_back(Eigen::VectorXd::Zero(s.b[l].size()));
      }
      for (size_t bi = start; bi < stop; ++bi) {
        const int i = train[bi];
        const Eigen::VectorXd input = x.row(i);
        // Forward with inverted dropout.
        Eigen::VectorXd z1 = s.w[0] * input + s.b[0];
        Eigen::VectorXd h1 = z1.cwiseMax(0.0);
        Eigen::VectorXd d1 = Eigen::VectorXd::Ones(h1.size());
        if (hyper.dropout > 0.0) {
          for (int k = 0; k < h1.size(); ++k) {
            d1(k) = unif(rng) < hyper.dropout ? 0.0 : 1.0 / (1.0 - hyper.dropout);
          }
          h1 = h1.cwiseProduct(d1);
        }
        Eigen::VectorXd z2 = s.w[1] * h1 + s.b[1];
        Eigen::VectorXd h2 = z2.cwiseMax(0.0);
        Eigen::VectorXd d2 = Eigen::VectorXd::Ones(h2.size());
        if (hyper.dropout > 0.0) {
          for (int k = 0; k < h2.size(); ++k) {
            d2(k) = unif(rng) < hyper.dropout ? 0.0 : 1.0 / (1.0 - hyper.dropout);
          }
          h2 = h2.cwiseProduct(d2);
        }
        const double yhat = (s.w[2] * h2 + s.b[2])(0);
        // d pinball / d yhat
        const double u = y(i) - yhat;
        const double dloss = u >= 0.0 ? -tau : (1.0 - tau);

        Eigen::VectorXd g2 = dloss * s.w[2].transpose() * Eigen::VectorXd::Ones(1);
        grad.w[2] += dloss * h2.transpose();
        grad.b[2](0) += dloss;
        Eigen::VectorXd gz2 =
            g2.cwiseProduct(d2).cwiseProduct((z2.array() > 0.0).cast<double>().matrix());
        grad.w[1] += gz2 * h1.transpose();
        grad.b[1] += gz2;
        Eigen::VectorXd g1 = s.w[1].transpose() * gz2;
        Eigen::VectorXd gz1 =
            g1.cwiseProduct(d1).cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
        grad.w[0] += gz1 * input.transpose();
        grad.b[0] += gz1;
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      ++step;
      const double corr1 = 1.0 - std::pow(beta1, step);
      const double corr2 = 1.0 - std::pow(beta2, step);
      for (size_t l = 0; l < s.w.size(); ++l) {
        m_avg.w[l] = beta1 * m_avg.w[l] + (1 - beta1) * (grad.w[l] * inv);
        v_avg.w[l] = beta2 * v_avg.w[l] + (1 - beta2) * (grad.w[l] * inv).cwiseAbs2();
        s.w[l] -= hyper.learning_rate *
                  ((m_avg.w[l] / corr1).array() / ((v_avg.w[l] / corr2).cwiseSqrt().array() + adam_eps))
                      .matrix();
        m_avg.b[l] = beta1 * m_avg.b[l] + (1 - beta1) * (grad.b[l] * inv);
        v_avg.b[l] = beta2 * v_avg.b[l] + (1 - beta2) * (grad.b[l] * inv).cwiseAbs2();
        s.b[l] -= hyper.learning_rate *
                  ((m_avg.b[l] / corr1).array() / ((v_avg.b[l] / corr2).cwiseSqrt().array() + adam_eps))
                      .matrix();
      }
    }
    const double loss = holdout_pinball(s, x, y, holdout, tau);
    if (loss < best_loss) {
      best_loss = loss;
      best = s;
    }
  }
  return best;
}

}  // namespace

QuantileModel QuantileModel::fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double tau,
                                 QrKind kind, const QrHyper& hyper) {
  check_fit_inputs(x, y, tau);
  QuantileModel model;
  model.tau_ = tau;
  model.kind_ = kind;
  model.input_dim_ = static_cast<int>(x.cols());

  if (kind == QrKind::Linear) {
    fit_linear_irls(x, y, tau, model.weights_, model.intercept_);
    return model;
  }

  if (hyper.max_epochs < 1) throw std::invalid_argument("QuantileModel::fit: max_epochs must be >= 1");
  MlpState s = fit_mlp(x, y, tau, hyper);
  model.layer_w_ = std::move(s.w);
  model.layer_b_ = std::move(s.b);
  return model;
}

double QuantileModel::predict(const Eigen::VectorXd& features) const {
  if (features.size() != input_dim_) {
    throw std::invalid_argument("QuantileModel::predict: feature length mismatch");
  }
  if (kind_ == QrKind::Linear) return weights_.dot(features) + intercept_;
  Eigen::VectorXd h1 = (layer_w_[0] * features + layer_b_[0]).cwiseMax(0.0);
  Eigen::VectorXd h2 = (layer_w_[1] * h1 + layer_b_[1]).cwiseMax(0.0);
  return (layer_w_[2] * h2 + layer_b_[2])(0);
}

Eigen::VectorXd QuantileModel::predict_many(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict(x.row(i));
  return out;
}

const Eigen::VectorXd& QuantileModel::weights() const {
  if (kind_ != QrKind::Linear) throw std::logic_error("QuantileModel::weights: not a linear model");
  return weights_;
}

double QuantileModel::intercept() const {
  if (kind_ != QrKind::Linear) throw std::logic_error("QuantileModel::intercept: not a linear model");
  return intercept_;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> pinball_subgradient_interval(
    const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const QuantileModel& model,
    double zero_tol) {
  if (model.kind() != QrKind::Linear) {
    throw std::invalid_argument("pinball_subgradient_interval: linear models only");
  }
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  const double tau = model.tau();

  Eigen::VectorXd lo = Eigen::VectorXd::Zero(p + 1);
  Eigen::VectorXd hi = Eigen::VectorXd::Zero(p + 1);
  for (int i = 0; i < n; ++i) {
    const double r = y(i) - model.predict(x.row(i));
    // d risk / d yhat_i is -tau above, (1-tau) below, and the whole
    // [-tau, 1-tau] segment at the kink.
    double c_lo, c_hi;
    if (std::abs(r) <= zero_tol) {
      c_lo = -tau;
      c_hi = 1.0 - tau;
    } else if (r > 0.0) {
      c_lo = c_hi = -tau;
    } else {
      c_lo = c_hi = 1.0 - tau;
    }
    for (int j = 0; j <= p; ++j) {
      const double xj = j < p ? x(i, j) : 1.0;
      const double a = c_lo * xj;
      const double b = c_hi * xj;
      lo(j) += std::min(a, b);
      hi(j) += std::max(a, b);
    }
  }
  lo /= n;
  hi /= n;
  return {lo, hi};
}

}  // namespace cpmda
