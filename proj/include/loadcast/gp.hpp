#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "loadcast/common.hpp"

namespace loadcast {

// Squared exponential (ARD) hyperparameters. length_scale_sq holds the
// diagonal of Lambda, i.e. the squared length scale per input dimension.
struct SEHyperParams {
    double process_var = 1.0;         // sigma_f^2
    Eigen::VectorXd length_scale_sq;  // Lambda diagonal, strictly positive
    double noise_var = 0.0;           // sigma_y^2 >= 0

    void validate() const;
};

double se_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime,
                 const SEHyperParams& hyper);

// Gram matrix of X (rows are samples) and cross-covariance against a single
// test point.
Eigen::MatrixXd se_gram(const Eigen::MatrixXd& X, const SEHyperParams& hyper);
Eigen::VectorXd se_cross(const Eigen::MatrixXd& X, const Eigen::VectorXd& x_star,
                         const SEHyperParams& hyper);

// Trained GP. The prior mean is the constant y_mean recorded at fit time;
// noise_correction is an optional per-point diagonal addition (used by the
// noisy-input extension).
struct GPModel {
    SEHyperParams hyper;
    Eigen::MatrixXd X;
    Eigen::VectorXd Y;
    double y_mean = 0.0;
    Eigen::VectorXd noise_correction;  // empty means zero

    Eigen::MatrixXd gram;               // C (no noise)
    Eigen::LLT<Eigen::MatrixXd> chol;   // of C + sigma_y^2 I + diag(correction)
    Eigen::VectorXd alpha;              // chol solve of (Y - y_mean)
    double jitter = 0.0;

    // Builds the gram/factorization caches. correction may be empty.
    static GPModel train(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                         const SEHyperParams& hyper,
                         const Eigen::VectorXd& correction = Eigen::VectorXd(),
                         double y_mean = 0.0);
};

PredictResult gp_predict(const GPModel& model, const Eigen::VectorXd& x_star);

// Analytic gradient of the posterior mean at x.
Eigen::VectorXd posterior_mean_gradient(const GPModel& model, const Eigen::VectorXd& x);

// Log marginal likelihood of centered observations yc under the SE kernel
// plus noise and the optional diagonal correction.
double log_marginal_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& yc,
                               const SEHyperParams& hyper,
                               const Eigen::VectorXd& correction = Eigen::VectorXd());

struct FitOptions {
    int multistarts = 5;
    int max_iterations = 120;
    double tolerance = 1e-8;
    // When set, receives the objective trace (log marginal likelihood per
    // accepted iterate) of the winning start.
    std::vector<double>* lml_trace = nullptr;
};

// Maximum likelihood fit in log-parameter space (L-BFGS with backtracking,
// multi-start over a fixed grid; the supplied init is always one of the
// starts). Returned hyperparameters correspond to mean-centered outputs.
SEHyperParams fit_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                      const SEHyperParams& init,
                      const Eigen::VectorXd& correction = Eigen::VectorXd(),
                      const FitOptions& options = FitOptions());

// Convenience: fit_mle with a data-driven init, then train the model with the
// recorded output mean.
GPModel fit_gp_model(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                     const FitOptions& options = FitOptions());

// Data-driven default init used by fit_gp_model and the multi-start grid.
SEHyperParams default_init(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y);

// Joint fit of kernel hyperparameters and per-dimension input-noise variances
// with the posterior-mean gradient matrix held fixed; warm-started, single
// start. Returns the fitted hypers and input-noise diagonal.
std::pair<SEHyperParams, Eigen::VectorXd> fit_mle_with_input_noise(
    const Eigen::MatrixXd& X, const Eigen::VectorXd& Y, const Eigen::MatrixXd& G,
    const SEHyperParams& init_hyper, const Eigen::VectorXd& init_input_noise,
    const FitOptions& options = FitOptions());

}  // namespace loadcast
