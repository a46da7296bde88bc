#include "dtgan/models.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "dtgan/common.hpp"
#include "dtgan/neural.hpp"

namespace dtgan::models {

using tabular::ColumnKind;
using tabular::Schema;
using tabular::Table;

FeatureSpec::FeatureSpec(const Schema& schema, const Table& fit_table, bool drop_target)
    : schema_(schema), drop_target_(drop_target) {
  auto cols = tabular::typify(schema, fit_table);
  mins_.assign(schema.num_columns(), 0.0);
  maxs_.assign(schema.num_columns(), 0.0);
  for (size_t c = 0; c < schema.num_columns(); ++c) {
    if (drop_target_ && c == schema.target_index()) continue;
    if (schema.column(c).kind == ColumnKind::continuous) {
      auto [mn, mx] = std::minmax_element(cols[c].values.begin(), cols[c].values.end());
      mins_[c] = *mn;
      maxs_[c] = *mx;
      dim_ += 1;
    } else {
      dim_ += schema.column(c).encoded_width();
    }
  }
  num_classes_ = schema.column(schema.target_index()).encoded_width();
}

Eigen::MatrixXd FeatureSpec::transform(const Table& table) const {
  auto cols = tabular::typify(schema_, table);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(table.num_rows()), dim_);
  for (size_t r = 0; r < table.num_rows(); ++r) {
    int f = 0;
    for (size_t c = 0; c < schema_.num_columns(); ++c) {
      if (drop_target_ && c == schema_.target_index()) continue;
      if (schema_.column(c).kind == ColumnKind::continuous) {
        double span = maxs_[c] - mins_[c];
        double v = cols[c].values[r];
        out(static_cast<Eigen::Index>(r), f++) = span == 0.0 ? 0.0 : (v - mins_[c]) / span;
      } else {
        int idx = cols[c].categories[r];
        out(static_cast<Eigen::Index>(r), f + idx) = 1.0;
        f += schema_.column(c).encoded_width();
      }
    }
  }
  return out;
}

std::vector<int> FeatureSpec::labels(const Table& table) const {
  auto cols = tabular::typify(schema_, table);
  return cols[schema_.target_index()].categories;
}

namespace {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::ArrayXd e = (z.row(i).array() - z.row(i).maxCoeff()).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

class LogisticRegression : public Classifier {
 public:
  void fit(const Eigen::MatrixXd& x, const std::vector<int>& y, int num_classes, Rng) override {
    const Eigen::Index n = x.rows(), d = x.cols();
    weights_ = Eigen::MatrixXd::Zero(d + 1, num_classes);
    Eigen::MatrixXd xb(n, d + 1);
    xb.leftCols(d) = x;
    xb.col(d).setOnes();
    Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(n, num_classes);
    for (Eigen::Index i = 0; i < n; ++i) targets(i, y[static_cast<size_t>(i)]) = 1.0;

    const double lr = 0.1, l2 = 1e-4;
    for (int it = 0; it < 500; ++it) {
      Eigen::MatrixXd p = softmax_rows(xb * weights_);
      Eigen::MatrixXd grad = xb.transpose() * (p - targets) / static_cast<double>(n);
      grad.topRows(d) += l2 * weights_.topRows(d);  // bias unregularized
      weights_ -= lr * grad;
    }
  }

  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& x) const override {
    Eigen::MatrixXd xb(x.rows(), x.cols() + 1);
    xb.leftCols(x.cols()) = x;
    xb.col(x.cols()).setOnes();
    return softmax_rows(xb * weights_);
  }

 private:
  Eigen::MatrixXd weights_;
};

struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1, right = -1;
  Eigen::VectorXd distribution;  // leaf only
};

class DecisionTree : public Classifier {
 public:
  DecisionTree(int max_depth, int min_leaf, int features_per_split = 0)
      : max_depth_(max_depth), min_leaf_(min_leaf), features_per_split_(features_per_split) {}

  void fit(const Eigen::MatrixXd& x, const std::vector<int>& y, int num_classes, Rng rng) override {
    num_classes_ = num_classes;
    nodes_.clear();
    std::vector<int> idx(static_cast<size_t>(x.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    build(x, y, idx, 0, rng);
  }

  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& x) const override {
    Eigen::MatrixXd out(x.rows(), num_classes_);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int node = 0;
      while (nodes_[static_cast<size_t>(node)].feature >= 0) {
        const TreeNode& nd = nodes_[static_cast<size_t>(node)];
        node = x(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
      }
      out.row(i) = nodes_[static_cast<size_t>(node)].distribution.transpose();
    }
    return out;
  }

 private:
  static double gini(const std::vector<double>& counts, double total) {
    if (total == 0.0) return 0.0;
    double g = 1.0;
    for (double c : counts) g -= (c / total) * (c / total);
    return g;
  }

  int build(const Eigen::MatrixXd& x, const std::vector<int>& y, const std::vector<int>& idx,
            int depth, Rng& rng) {
    int me = static_cast<int>(nodes_.size());
    nodes_.emplace_back();

    std::vector<double> counts(static_cast<size_t>(num_classes_), 0.0);
    for (int i : idx) counts[static_cast<size_t>(y[static_cast<size_t>(i)])] += 1.0;
    double total = static_cast<double>(idx.size());
    bool pure =
        std::any_of(counts.begin(), counts.end(), [&](double c) { return c == total; });

    int best_feature = -1;
    double best_threshold = 0.0, best_score = gini(counts, total);
    if (!pure && depth < max_depth_ && idx.size() >= 2 * static_cast<size_t>(min_leaf_)) {
      std::vector<int> features(static_cast<size_t>(x.cols()));
      std::iota(features.begin(), features.end(), 0);
      if (features_per_split_ > 0 && features_per_split_ < x.cols()) {
        rng.shuffle(features.begin(), features.end());
        features.resize(static_cast<size_t>(features_per_split_));
        std::sort(features.begin(), features.end());
      }
      for (int f : features) {
        std::vector<std::pair<double, int>> vals;
        vals.reserve(idx.size());
        for (int i : idx) vals.emplace_back(x(i, f), y[static_cast<size_t>(i)]);
        std::sort(vals.begin(), vals.end());
        std::vector<double> left_counts(static_cast<size_t>(num_classes_), 0.0);
        double left_total = 0.0;
        for (size_t k = 0; k + 1 < vals.size(); ++k) {
          left_counts[static_cast<size_t>(vals[k].second)] += 1.0;
          left_total += 1.0;
          if (vals[k].first == vals[k + 1].first) continue;
          double right_total = total - left_total;
          if (left_total < min_leaf_ || right_total < min_leaf_) continue;
          std::vector<double> right_counts(static_cast<size_t>(num_classes_));
          for (size_t c = 0; c < right_counts.size(); ++c) {
            right_counts[c] = counts[c] - left_counts[c];
          }
          double score = (left_total * gini(left_counts, left_total) +
                          right_total * gini(right_counts, right_total)) /
                         total;
          if (score + 1e-12 < best_score) {
            best_score = score;
            best_feature = f;
            best_threshold = 0.5 * (vals[k].first + vals[k + 1].first);
          }
        }
      }
    }

    if (best_feature < 0) {
      nodes_[static_cast<size_t>(me)].distribution = Eigen::VectorXd::Zero(num_classes_);
      for (int c = 0; c < num_classes_; ++c) {
        nodes_[static_cast<size_t>(me)].distribution[c] =
            total == 0.0 ? 1.0 / num_classes_ : counts[static_cast<size_t>(c)] / total;
      }
      return me;
    }

    std::vector<int> left, right;
    for (int i : idx) {
      (x(i, best_feature) <= best_threshold ? left : right).push_back(i);
    }
    nodes_[static_cast<size_t>(me)].feature = best_feature;
    nodes_[static_cast<size_t>(me)].threshold = best_threshold;
    int l = build(x, y, left, depth + 1, rng);
    int r = build(x, y, right, depth + 1, rng);
    nodes_[static_cast<size_t>(me)].left = l;
    nodes_[static_cast<size_t>(me)].right = r;
    return me;
  }

  int max_depth_, min_leaf_, features_per_split_;
  int num_classes_ = 0;
  std::vector<TreeNode> nodes_;
};

class RandomForest : public Classifier {
 public:
  RandomForest(int trees, int max_depth, int min_leaf)
      : trees_(trees), max_depth_(max_depth), min_leaf_(min_leaf) {}

  void fit(const Eigen::MatrixXd& x, const std::vector<int>& y, int num_classes, Rng rng) override {
    num_classes_ = num_classes;
    forest_.clear();
    int per_split = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(x.cols()))));
    for (int t = 0; t < trees_; ++t) {
      Rng tree_rng = rng.derive(static_cast<uint64_t>(t) + 1);
      const Eigen::Index n = x.rows();
      Eigen::MatrixXd bx(n, x.cols());
      std::vector<int> by(static_cast<size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        auto pick = static_cast<Eigen::Index>(tree_rng.uniform_int(static_cast<uint64_t>(n)));
        bx.row(i) = x.row(pick);
        by[static_cast<size_t>(i)] = y[static_cast<size_t>(pick)];
      }
      auto tree = std::make_unique<DecisionTree>(max_depth_, min_leaf_, per_split);
      tree->fit(bx, by, num_classes, tree_rng);
      forest_.push_back(std::move(tree));
    }
  }

  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& x) const override {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(x.rows(), num_classes_);
    for (const auto& tree : forest_) acc += tree->predict_proba(x);
    return acc / static_cast<double>(forest_.size());
  }

 private:
  int trees_, max_depth_, min_leaf_;
  int num_classes_ = 0;
  std::vector<std::unique_ptr<DecisionTree>> forest_;
};

class Mlp : public Classifier {
 public:
  void fit(const Eigen::MatrixXd& x, const std::vector<int>& y, int num_classes, Rng rng) override {
    net_ = neural::DenseNetD::glorot(
        {static_cast<int>(x.cols()), 100, num_classes},
        {neural::Activation::relu, neural::Activation::identity}, rng);
    neural::AdamState<double> adam(net_.param_count(), 1e-3);
    adam.beta1 = 0.9;
    adam.beta2 = 0.999;
    Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(x.rows(), num_classes);
    for (Eigen::Index i = 0; i < x.rows(); ++i) targets(i, y[static_cast<size_t>(i)]) = 1.0;
    for (int epoch = 0; epoch < 200; ++epoch) {
      neural::ForwardTrace<double> trace;
      Eigen::MatrixXd p = softmax_rows(net_.forward(x, &trace));
      neural::adam_step(adam, net_, net_.param_grads(trace, p - targets));
    }
  }

  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& x) const override {
    return softmax_rows(net_.forward(x));
  }

 private:
  neural::DenseNetD net_;
};

}  // namespace

std::unique_ptr<Classifier> make_logistic_regression() {
  return std::make_unique<LogisticRegression>();
}
std::unique_ptr<Classifier> make_decision_tree(int max_depth, int min_leaf) {
  return std::make_unique<DecisionTree>(max_depth, min_leaf);
}
std::unique_ptr<Classifier> make_random_forest(int trees, int max_depth, int min_leaf) {
  return std::make_unique<RandomForest>(trees, max_depth, min_leaf);
}
std::unique_ptr<Classifier> make_mlp() { return std::make_unique<Mlp>(); }

LinearFit fit_linear_regression(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::Index n = x.rows(), d = x.cols();
  if (n < 1) throw DataError("empty regression design");
  Eigen::MatrixXd xb(n, d + 1);
  xb.leftCols(d) = x;
  xb.col(d).setOnes();

  LinearFit fit;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xb);
  if (qr.rank() == d + 1) {
    fit.weights = qr.solve(y);
  } else {
    fit.used_ridge = true;
    Eigen::MatrixXd gram = xb.transpose() * xb;
    gram.diagonal().array() += 1e-6;
    fit.weights = gram.ldlt().solve(xb.transpose() * y);
  }
  Eigen::VectorXd residual = y - xb * fit.weights;
  fit.residual_variance = std::max(residual.squaredNorm() / static_cast<double>(n), 1e-12);
  return fit;
}

Eigen::VectorXd predict_linear(const LinearFit& fit, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd xb(x.rows(), x.cols() + 1);
  xb.leftCols(x.cols()) = x;
  xb.col(x.cols()).setOnes();
  return xb * fit.weights;
}

namespace {

int argmax_row(const Eigen::MatrixXd& proba, Eigen::Index i) {
  int best = 0;
  for (int c = 1; c < proba.cols(); ++c) {
    if (proba(i, c) > proba(i, best)) best = c;
  }
  return best;
}

// Mann-Whitney AUC with average ranks for tied scores.
double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg_rank;
    i = j + 1;
  }
  double rank_sum = 0.0;
  size_t n_pos = 0;
  for (size_t k = 0; k < n; ++k) {
    if (positive[k]) {
      rank_sum += ranks[k];
      ++n_pos;
    }
  }
  size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  return (rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double binary_average_precision(const std::vector<double>& scores,
                                const std::vector<bool>& positive) {
  const size_t n = scores.size();
  size_t total_pos = 0;
  for (bool p : positive) total_pos += p ? 1 : 0;
  if (total_pos == 0) return 0.0;
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  double tp = 0.0, fp = 0.0, prev_recall = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;  // tied scores share one threshold
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (size_t k = i; k <= j; ++k) {
      if (positive[order[k]]) {
        tp += 1.0;
      } else {
        fp += 1.0;
      }
    }
    double recall = tp / static_cast<double>(total_pos);
    double precision = tp + fp == 0.0 ? 0.0 : tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j + 1;
  }
  return ap;
}

// Binary targets score the second schema category as positive; multi-class
// averages one-vs-rest over the classes present in the test labels.
template <typename Metric>
double one_vs_rest(const Eigen::MatrixXd& proba, const std::vector<int>& y, int num_classes,
                   Metric metric) {
  std::vector<int> classes;
  if (num_classes == 2) {
    classes = {1};
  } else {
    for (int c = 0; c < num_classes; ++c) classes.push_back(c);
  }
  double sum = 0.0;
  int used = 0;
  for (int c : classes) {
    std::vector<double> scores(y.size());
    std::vector<bool> positive(y.size());
    bool any_pos = false, any_neg = false;
    for (size_t i = 0; i < y.size(); ++i) {
      scores[i] = proba(static_cast<Eigen::Index>(i), c);
      positive[i] = y[i] == c;
      if (positive[i]) {
        any_pos = true;
      } else {
        any_neg = true;
      }
    }
    if (num_classes > 2 && (!any_pos || !any_neg)) continue;
    sum += metric(scores, positive);
    ++used;
  }
  return used == 0 ? 0.5 : sum / used;
}

}  // namespace

double accuracy(const Eigen::MatrixXd& proba, const std::vector<int>& y) {
  if (y.empty()) throw DataError("empty evaluation set");
  int hits = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    if (argmax_row(proba, static_cast<Eigen::Index>(i)) == y[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

double f1_macro(const Eigen::MatrixXd& proba, const std::vector<int>& y, int num_classes) {
  std::vector<double> tp(static_cast<size_t>(num_classes), 0.0);
  std::vector<double> fp(static_cast<size_t>(num_classes), 0.0);
  std::vector<double> fn(static_cast<size_t>(num_classes), 0.0);
  for (size_t i = 0; i < y.size(); ++i) {
    int pred = argmax_row(proba, static_cast<Eigen::Index>(i));
    if (pred == y[i]) {
      tp[static_cast<size_t>(pred)] += 1.0;
    } else {
      fp[static_cast<size_t>(pred)] += 1.0;
      fn[static_cast<size_t>(y[i])] += 1.0;
    }
  }
  double sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    double p = tp[c] + fp[c] == 0.0 ? 0.0 : tp[c] / (tp[c] + fp[c]);
    double r = tp[c] + fn[c] == 0.0 ? 0.0 : tp[c] / (tp[c] + fn[c]);
    sum += p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  return sum / num_classes;
}

double auc(const Eigen::MatrixXd& proba, const std::vector<int>& y, int num_classes) {
  return one_vs_rest(proba, y, num_classes, binary_auc);
}

double average_precision(const Eigen::MatrixXd& proba, const std::vector<int>& y,
                         int num_classes) {
  return one_vs_rest(proba, y, num_classes, binary_average_precision);
}

}  // namespace dtgan::models
