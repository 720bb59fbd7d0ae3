#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cfx/design.hpp"
#include "cfx/ingest.hpp"
#include "cfx/solver.hpp"

namespace cfx {

struct TslsSpec {
  std::string treatment;                 // endogenous, one-hot encoded
  std::vector<std::string> instruments;  // excluded instruments Z
  std::vector<std::string> covariates;   // exogenous X
};

inline constexpr double kWeakInstrumentF = 10.0;

struct TslsFit {
  ColumnLayout layout;                        // second stage: [1 | A | X]
  std::vector<std::string> first_stage_terms; // W = [1 | X | Z]
  Eigen::MatrixXd gamma;                      // q x (K-1) first-stage coefficients
  Eigen::MatrixXd beta;                       // p x m
  std::vector<Eigen::MatrixXd> cov_beta;      // per KPI, sigma2 (Mhat'Mhat)^-1
  Eigen::VectorXd sigma2;                     // residuals use the observed A
  Eigen::VectorXd rss;
  Eigen::MatrixXd mhat_gram_inv;
  double n_obs = 0.0;
  double df_resid = 0.0;
  std::vector<double> first_stage_f;          // per endogenous column
  std::vector<std::string> warnings;
  std::size_t sparse_input_bytes = 0;         // CSR size of [1 | A | X | Z] plus y

  /// View usable by the effects module (homoskedastic covariance only).
  FitResult as_fit_result() const;
};

/// Two-stage least squares assembled from cross products of the sparse
/// design [1 | A | X | Z]; the fitted treatment matrix is never formed.
/// Mhat'Mhat = Pi' (W'W) Pi and Mhat'y = Pi' W'y, where Pi maps W to
/// [1 | W Gamma | X]. Errors: RankDeficient, InvalidDesign.
TslsFit fit_2sls(const EncodedTable& table, const TslsSpec& spec);

inline constexpr std::size_t kDenseTslsMaxRows = 100'000;

/// Textbook two-pass estimator with dense matrices and QR solves; test oracle.
/// Errors: TooLargeForOracle.
TslsFit dense_2sls_oracle(const EncodedTable& table, const TslsSpec& spec);

}  // namespace cfx
