#pragma once

// Agreement metrics and training objectives. All statistics are population
// (divide-by-n) statistics.

#include <cmath>
#include <span>
#include <stdexcept>

namespace deepser {

struct Moments {
  double mean_x = 0.0, mean_y = 0.0;
  double var_x = 0.0, var_y = 0.0, cov = 0.0;
};

inline Moments moments(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("length mismatch");
  if (x.empty()) throw std::invalid_argument("empty input");
  const auto n = static_cast<double>(x.size());
  Moments m;
  for (std::size_t i = 0; i < x.size(); ++i) {
    m.mean_x += x[i];
    m.mean_y += y[i];
  }
  m.mean_x /= n;
  m.mean_y /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - m.mean_x, dy = y[i] - m.mean_y;
    m.var_x += dx * dx;
    m.var_y += dy * dy;
    m.cov += dx * dy;
  }
  m.var_x /= n;
  m.var_y /= n;
  m.cov /= n;
  return m;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("pearson: need equal lengths >= 2");
  const Moments m = moments(x, y);
  if (m.var_x == 0.0 || m.var_y == 0.0) throw std::invalid_argument("pearson: undefined correlation (constant input)");
  return m.cov / std::sqrt(m.var_x * m.var_y);
}

/// CCC from precomputed moments: 2 cov / (var_x + var_y + (mean_x - mean_y)^2).
/// Both inputs constant and equal gives 0/0; that case is perfect agreement.
inline double ccc_from_moments(const Moments& m) {
  const double gap = m.mean_x - m.mean_y;
  const double denom = m.var_x + m.var_y + gap * gap;
  if (denom == 0.0) return 1.0;
  return 2.0 * m.cov / denom;
}

/// Concordance correlation coefficient of predictions x against gold y.
inline double ccc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("ccc: need equal lengths >= 2");
  return ccc_from_moments(moments(x, y));
}

inline double ccc_loss(std::span<const double> x, std::span<const double> y) { return 1.0 - ccc(x, y); }

struct LossWeights {
  double alpha = 1.0 / 3.0;
  double beta = 1.0 / 3.0;

  double dominance() const { return 1.0 - alpha - beta; }
  bool valid() const { return alpha >= 0.0 && beta >= 0.0 && alpha + beta <= 1.0 + 1e-12; }
};

inline double total_ccc_loss(double lv, double la, double ld, const LossWeights& w) {
  if (!w.valid()) throw std::invalid_argument("total_ccc_loss: need alpha, beta >= 0 and alpha + beta <= 1");
  return w.alpha * lv + w.beta * la + w.dominance() * ld;
}

inline double mse(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw std::invalid_argument("mse: need equal non-zero lengths");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (y[i] - x[i]) * (y[i] - x[i]);
  return acc / static_cast<double>(x.size());
}

inline double total_mse(double mv, double ma, double md) { return (mv + ma + md) / 3.0; }

struct EvalTriple {
  double ccc_v = 0.0, ccc_a = 0.0, ccc_d = 0.0;
  double mean = 0.0;
};

inline EvalTriple make_triple(double v, double a, double d) { return {v, a, d, (v + a + d) / 3.0}; }

/// Per-dimension CCC; inputs are (valence, arousal, dominance) columns in label space.
inline EvalTriple evaluate(std::span<const double> pred_v, std::span<const double> pred_a,
                           std::span<const double> pred_d, std::span<const double> gold_v,
                           std::span<const double> gold_a, std::span<const double> gold_d) {
  return make_triple(ccc(pred_v, gold_v), ccc(pred_a, gold_a), ccc(pred_d, gold_d));
}

}  // namespace deepser
