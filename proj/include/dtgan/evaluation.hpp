#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "dtgan/tabular.hpp"

namespace dtgan::evaluation {

struct SimilarityReport {
  std::optional<double> avg_jsd;   // absent without categorical columns
  std::optional<double> avg_wd;    // absent without continuous columns
  double diff_corr = 0.0;
  std::vector<std::string> categorical_columns;
  std::vector<std::string> continuous_columns;

  std::string to_json() const;
};

/// Mean Jensen-Shannon divergence (base 2) over categorical columns.
std::optional<double> avg_jsd(const tabular::Table& real, const tabular::Table& synth,
                              const tabular::Schema& schema);

/// Mean 1-d empirical Wasserstein-1 distance over continuous columns, after
/// min-max normalization fitted on the union of both samples.
std::optional<double> avg_wd(const tabular::Table& real, const tabular::Table& synth,
                             const tabular::Schema& schema);

/// Pairwise association matrix: Pearson (continuous-continuous), Theil's U
/// in both directions (categorical-categorical), correlation ratio mirrored
/// (categorical-continuous). Diagonal is 1; zero-variance columns associate
/// as 0.
Eigen::MatrixXd association_matrix(const tabular::Table& table, const tabular::Schema& schema);

/// Frobenius norm of the association-matrix difference.
double diff_corr(const tabular::Table& real, const tabular::Table& synth,
                 const tabular::Schema& schema);

SimilarityReport similarity(const tabular::Table& real, const tabular::Table& synth,
                            const tabular::Schema& schema);

struct ModelScores {
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  double apr = 0.0;
};

struct UtilityReport {
  std::vector<std::string> model_names;
  std::vector<ModelScores> real_scores;   // trained on real, tested on real
  std::vector<ModelScores> synth_scores;  // trained on synthetic, tested on real
  std::vector<ModelScores> differences;   // real minus synthetic
  ModelScores mean_difference;
  uint64_t seed = 0;

  std::string to_json() const;
};

/// Trains the four built-in models twice (real train vs synthetic train),
/// scores both on the real test set, and reports the score differences.
UtilityReport ml_utility(const tabular::Table& real_train, const tabular::Table& real_test,
                         const tabular::Table& synth_train, const tabular::Schema& schema,
                         uint64_t seed);

}  // namespace dtgan::evaluation
