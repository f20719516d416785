#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>

#include "loadcast/common.hpp"

namespace loadcast {

enum class Nonlinearity { ReLU, Tanh, Identity };

std::string to_string(Nonlinearity phi);
Nonlinearity nonlinearity_from_string(const std::string& name);

// Deep-kernel GP configuration. The kernel is built by applying the layer
// recursion `depth` times on top of the base inner-product kernel.
struct NNGPConfig {
    int depth = 3;                  // L >= 2
    double weight_prior_var = 1.0;  // sigma_w^2 > 0
    double bias_prior_var = 1.0;    // sigma_b^2 >= 0
    Nonlinearity phi = Nonlinearity::ReLU;
    int input_dim = 1;
    // Likelihood noise for prediction; negative means auto (1e-6 x output
    // variance).
    double observation_noise = -1.0;
    // Route ReLU layer steps through the closed-form arc-cosine expression
    // instead of the lookup table.
    bool analytic_relu = false;

    void validate() const;
};

struct TableGrid {
    int n_pre = 401;     // pre-activation grid size
    double u_max = 10.0;  // pre-activation half-range (standard deviations)
    int n_var = 301;     // variance grid size over [0, s_max]
    double s_max = 64.0;
    int n_corr = 301;    // correlation grid size over [-1, 1]

    void validate() const;
    bool operator==(const TableGrid&) const = default;
};

// Tabulated E[phi(u) phi(v)] under a bivariate normal with common variance s
// and correlation c, evaluated by bilinear interpolation.
class NonlinearityTable {
public:
    NonlinearityTable(Nonlinearity phi, TableGrid grid, Eigen::MatrixXd values);

    Nonlinearity phi() const { return phi_; }
    const TableGrid& grid() const { return grid_; }
    const Eigen::MatrixXd& values() const { return values_; }  // n_var x n_corr
    Eigen::VectorXd pre_activation_grid() const;
    const Eigen::VectorXd& variance_grid() const { return var_grid_; }
    const Eigen::VectorXd& correlation_grid() const { return corr_grid_; }

    // Bilinear interpolation at (s, c). c is clamped to [-1, 1]; s is clamped
    // up to the smallest positive grid value, and s above s_max throws an
    // out-of-range error suggesting a larger s_max.
    double lookup(double s, double c) const;

    void save(const std::string& path) const;
    static NonlinearityTable load(const std::string& path);

private:
    Nonlinearity phi_;
    TableGrid grid_;
    Eigen::VectorXd var_grid_, corr_grid_;
    Eigen::MatrixXd values_;
};

NonlinearityTable build_table(Nonlinearity phi, const TableGrid& grid = TableGrid());

// Returns the table from the cache directory (LOADCAST_TABLE_CACHE or the
// explicit argument), building and saving it on a miss. Stale or mismatched
// cache files are ignored and rebuilt.
std::shared_ptr<const NonlinearityTable> cached_table(Nonlinearity phi,
                                                      const TableGrid& grid = TableGrid(),
                                                      const std::string& cache_dir = "");

// Closed-form E[relu(u) relu(v)] for variance s and correlation c (arc-cosine
// kernel); the oracle for the tabulated path.
double relu_moment(double s, double c);

// sigma_b^2 + sigma_w^2 (x . x') / d_in.
double nngp_base_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime,
                        const NNGPConfig& config);

// One application of the layer recursion. Requires k_xx == k_yy within 1e-9
// (guaranteed by the constant-norm pre-processing).
double nngp_layer_step(double k_xy, double k_xx, double k_yy, const NNGPConfig& config,
                       const NonlinearityTable& table);

// Scales each row to squared norm d (throws on zero rows).
Eigen::MatrixXd normalize_rows_to_constant_norm(const Eigen::MatrixXd& inputs);

// Kernel matrix after constant-norm scaling and `depth` recursion layers.
// Symmetric with a constant diagonal.
Eigen::MatrixXd nngp_kernel_matrix(const Eigen::MatrixXd& inputs, const NNGPConfig& config,
                                   const NonlinearityTable& table);

class NNGPModel {
public:
    static NNGPModel train(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& outputs,
                           const NNGPConfig& config,
                           std::shared_ptr<const NonlinearityTable> table);

    // Conditional mean/variance at one raw (unscaled) input.
    PredictResult predict(const Eigen::VectorXd& input) const;

    // Posterior means for a batch of raw inputs (rows); used as the GSA
    // surrogate.
    Eigen::VectorXd predict_mean_batch(const Eigen::MatrixXd& inputs) const;

    const NNGPConfig& config() const { return config_; }
    double observation_noise() const { return sigma_obs_; }
    const Eigen::MatrixXd& kernel_matrix() const { return kernel_; }
    const Eigen::MatrixXd& train_inputs() const { return scaled_inputs_; }

private:
    NNGPConfig config_;
    std::shared_ptr<const NonlinearityTable> table_;
    Eigen::MatrixXd scaled_inputs_;
    Eigen::VectorXd outputs_;
    double y_mean_ = 0.0;
    double sigma_obs_ = 0.0;
    Eigen::MatrixXd kernel_;
    Eigen::LLT<Eigen::MatrixXd> chol_;
    Eigen::VectorXd alpha_;
    // Self-covariance per layer (shared by every scaled input).
    std::vector<double> diag_path_;
};

}  // namespace loadcast
