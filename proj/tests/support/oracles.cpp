#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace panel_dml::testing {

double wg_ols_theta(const PanelDataset& panel) {
  const Index t = panel.n_waves;
  const Index n = panel.n_rows();
  const Index p = panel.x.cols();
  Eigen::MatrixXd z(n, p + 1);
  Eigen::VectorXd y(n);
  for (Index i = 0; i < panel.n_units; ++i) {
    const Index start = i * t;
    const double y_mean = panel.y.segment(start, t).sum() / static_cast<double>(t);
    const double d_mean = panel.d.segment(start, t).sum() / static_cast<double>(t);
    for (Index w = 0; w < t; ++w) {
      y[start + w] = panel.y[start + w] - y_mean;
      z(start + w, 0) = panel.d[start + w] - d_mean;
    }
    for (Index j = 0; j < p; ++j) {
      double m = 0.0;
      for (Index w = 0; w < t; ++w) m += panel.x(start + w, j);
      m /= static_cast<double>(t);
      for (Index w = 0; w < t; ++w) z(start + w, j + 1) = panel.x(start + w, j) - m;
    }
  }
  const Eigen::VectorXd coef = z.householderQr().solve(y);
  return coef[0];
}

namespace {

double sse_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double s = 0.0;
  for (double v : values) s += (v - mean) * (v - mean);
  return s;
}

double grow(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<Index>& rows, int depth) {
  std::vector<double> ys;
  for (Index r : rows) ys.push_back(y[r]);
  const double here = sse_of(ys);
  if (depth == 0 || rows.size() < 2) return here;
  double best = here;
  std::vector<Index> best_left, best_right;
  for (Index j = 0; j < x.cols(); ++j) {
    std::vector<double> values;
    for (Index r : rows) values.push_back(x(r, j));
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t k = 0; k + 1 < values.size(); ++k) {
      const double cut = 0.5 * (values[k] + values[k + 1]);
      std::vector<Index> left, right;
      std::vector<double> yl, yr;
      for (Index r : rows) {
        if (x(r, j) <= cut) {
          left.push_back(r);
          yl.push_back(y[r]);
        } else {
          right.push_back(r);
          yr.push_back(y[r]);
        }
      }
      const double split = sse_of(yl) + sse_of(yr);
      if (split < best - 1e-12) {
        best = split;
        best_left = left;
        best_right = right;
      }
    }
  }
  if (best_left.empty()) return here;
  return grow(x, y, best_left, depth - 1) + grow(x, y, best_right, depth - 1);
}

}  // namespace

double brute_force_greedy_sse(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int max_depth) {
  std::vector<Index> rows(static_cast<std::size_t>(y.size()));
  for (Index i = 0; i < y.size(); ++i) rows[static_cast<std::size_t>(i)] = i;
  return grow(x, y, rows, max_depth);
}

Eigen::VectorXd lasso_fista(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda, int iterations) {
  const double n = static_cast<double>(x.rows());
  const Eigen::MatrixXd h = x.transpose() * x / n;
  const Eigen::VectorXd g0 = x.transpose() * y / n;
  const double lipschitz = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h).eigenvalues().maxCoeff();
  const double step = 1.0 / std::max(lipschitz, 1e-12);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(x.cols());
  Eigen::VectorXd z = b;
  double t = 1.0;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::VectorXd grad = h * z - g0;
    Eigen::VectorXd next = z - step * grad;
    for (Index j = 0; j < next.size(); ++j) {
      const double v = next[j];
      next[j] = v > step * lambda ? v - step * lambda : (v < -step * lambda ? v + step * lambda : 0.0);
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    z = next + ((t - 1.0) / t_next) * (next - b);
    const double change = (next - b).cwiseAbs().maxCoeff();
    b = next;
    t = t_next;
    if (change < 1e-15 && it > 100) break;
  }
  return b;
}

namespace {

struct Fit {
  Eigen::VectorXd slope;
  double intercept = 0.0;
};

Fit fit_standardized(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
  const double n = static_cast<double>(x.rows());
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd xc = x.rowwise() - mean;
  Eigen::VectorXd sd = (xc.array().square().colwise().sum() / n).sqrt().transpose();
  for (Index j = 0; j < sd.size(); ++j) xc.col(j) /= sd[j];
  const double y_mean = y.mean();
  const Eigen::VectorXd b = lasso_fista(xc, (y.array() - y_mean).matrix(), lambda);
  Fit f;
  f.slope = b.cwiseQuotient(sd);
  f.intercept = y_mean - mean.dot(f.slope);
  return f;
}

}  // namespace

LassoCvScan lasso_cv_reference(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<double>& grid,
                               const std::vector<int>& blocks, int n_blocks) {
  LassoCvScan scan;
  scan.cv_mse.assign(grid.size(), 0.0);
  for (int b = 0; b < n_blocks; ++b) {
    std::vector<Index> train, held;
    for (Index r = 0; r < x.rows(); ++r) (blocks[static_cast<std::size_t>(r)] == b ? held : train).push_back(r);
    const Eigen::MatrixXd xt = x(train, Eigen::all);
    const Eigen::VectorXd yt = y(train);
    const Eigen::MatrixXd xh = x(held, Eigen::all);
    const Eigen::VectorXd yh = y(held);
    for (std::size_t l = 0; l < grid.size(); ++l) {
      const Fit f = fit_standardized(xt, yt, grid[l]);
      const Eigen::VectorXd err = yh - ((xh * f.slope).array() + f.intercept).matrix();
      scan.cv_mse[l] += err.squaredNorm() / static_cast<double>(held.size()) / n_blocks;
    }
  }
  scan.best = static_cast<std::size_t>(std::min_element(scan.cv_mse.begin(), scan.cv_mse.end()) - scan.cv_mse.begin());
  const Fit f = fit_standardized(x, y, grid[scan.best]);
  scan.coefficients = f.slope;
  scan.intercept = f.intercept;
  return scan;
}

double sample_variance(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace panel_dml::testing
