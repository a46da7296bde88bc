#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "dtgan/rng.hpp"
#include "dtgan/tabular.hpp"

namespace dtgan::models {

/// Numeric design matrix for the built-in models: continuous features
/// min-max scaled to [0, 1] with bounds fitted on a training table,
/// categorical features dummy-encoded over the schema's category lists.
class FeatureSpec {
 public:
  FeatureSpec(const tabular::Schema& schema, const tabular::Table& fit_table,
              bool drop_target = true);

  Eigen::MatrixXd transform(const tabular::Table& table) const;
  std::vector<int> labels(const tabular::Table& table) const;  // target class indices
  int num_classes() const { return num_classes_; }
  int dim() const { return dim_; }

 private:
  const tabular::Schema& schema_;
  bool drop_target_;
  std::vector<double> mins_, maxs_;  // per schema column; unused for categorical
  int dim_ = 0;
  int num_classes_ = 0;
};

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual void fit(const Eigen::MatrixXd& x, const std::vector<int>& y, int num_classes,
                   Rng rng) = 0;
  /// Row-stochastic class probabilities, one row per sample.
  virtual Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& x) const = 0;
};

/// Multinomial logistic regression: full-batch gradient descent, 500
/// iterations, learning rate 0.1, L2 1e-4.
std::unique_ptr<Classifier> make_logistic_regression();

/// CART decision tree: gini impurity, max depth 12, min leaf 2.
std::unique_ptr<Classifier> make_decision_tree(int max_depth = 12, int min_leaf = 2);

/// Random forest: bootstrap trees over sqrt(d) features per split.
std::unique_ptr<Classifier> make_random_forest(int trees = 20, int max_depth = 12,
                                               int min_leaf = 2);

/// One hidden layer of 100 relu units, Adam, 200 full-batch epochs.
std::unique_ptr<Classifier> make_mlp();

struct LinearFit {
  Eigen::VectorXd weights;  // last entry is the intercept
  double residual_variance = 0.0;
  bool used_ridge = false;
};

/// Ordinary least squares with intercept; falls back to ridge (1e-6) on a
/// rank-deficient design.
LinearFit fit_linear_regression(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);
Eigen::VectorXd predict_linear(const LinearFit& fit, const Eigen::MatrixXd& x);

// Score helpers shared by the evaluation battery and the attacks.
double accuracy(const Eigen::MatrixXd& proba, const std::vector<int>& y);
double f1_macro(const Eigen::MatrixXd& proba, const std::vector<int>& y, int num_classes);
/// Binary: positive-class probability; multi-class: macro one-vs-rest.
double auc(const Eigen::MatrixXd& proba, const std::vector<int>& y, int num_classes);
double average_precision(const Eigen::MatrixXd& proba, const std::vector<int>& y,
                         int num_classes);

}  // namespace dtgan::models
