#include "loadcast/nngp.hpp"

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

#include "loadcast/errors.hpp"

namespace loadcast {

namespace {

double apply_phi(Nonlinearity phi, double v) {
    switch (phi) {
        case Nonlinearity::ReLU:
            return v > 0.0 ? v : 0.0;
        case Nonlinearity::Tanh:
            return std::tanh(v);
        case Nonlinearity::Identity:
            return v;
    }
    return v;
}

// Applies phi to sqrt(s) * t for every (s row, t column).
Eigen::MatrixXd phi_rows(Nonlinearity phi, const Eigen::VectorXd& var_grid,
                         const Eigen::VectorXd& t) {
    Eigen::MatrixXd out(var_grid.size(), t.size());
    for (Eigen::Index i = 0; i < var_grid.size(); ++i) {
        const double root = std::sqrt(var_grid[i]);
        switch (phi) {
            case Nonlinearity::ReLU:
                out.row(i) = (root * t.array()).max(0.0).matrix().transpose();
                break;
            case Nonlinearity::Tanh:
                out.row(i) = (root * t.array()).tanh().matrix().transpose();
                break;
            case Nonlinearity::Identity:
                out.row(i) = (root * t.array()).matrix().transpose();
                break;
        }
    }
    return out;
}

}  // namespace

std::string to_string(Nonlinearity phi) {
    switch (phi) {
        case Nonlinearity::ReLU:
            return "relu";
        case Nonlinearity::Tanh:
            return "tanh";
        case Nonlinearity::Identity:
            return "identity";
    }
    return "relu";
}

Nonlinearity nonlinearity_from_string(const std::string& name) {
    if (name == "relu") return Nonlinearity::ReLU;
    if (name == "tanh") return Nonlinearity::Tanh;
    if (name == "identity") return Nonlinearity::Identity;
    throw ValidationError("unknown nonlinearity `" + name + "` (relu, tanh, identity)");
}

void NNGPConfig::validate() const {
    if (depth < 2) {
        throw ValidationError("NNGP depth must be at least 2");
    }
    if (!(weight_prior_var > 0.0)) {
        throw ValidationError("weight prior variance must be strictly positive");
    }
    if (bias_prior_var < 0.0) {
        throw ValidationError("bias prior variance must be nonnegative");
    }
    if (input_dim < 1) {
        throw ValidationError("input dimension must be positive");
    }
}

void TableGrid::validate() const {
    if (n_pre < 3 || n_var < 3 || n_corr < 3) {
        throw ValidationError("table grids need at least 3 points each");
    }
    if (!(u_max > 0.0) || !(s_max > 0.0)) {
        throw ValidationError("table grid ranges must be positive");
    }
    if (!(s_max < u_max * u_max)) {
        throw ValidationError("table grid requires s_max < u_max^2");
    }
}

NonlinearityTable::NonlinearityTable(Nonlinearity phi, TableGrid grid, Eigen::MatrixXd values)
    : phi_(phi), grid_(grid), values_(std::move(values)) {
    grid_.validate();
    if (values_.rows() != grid_.n_var || values_.cols() != grid_.n_corr) {
        throw ValidationError("table values shape does not match grid");
    }
    if (!values_.allFinite()) {
        throw NumericalError("nonlinearity table contains non-finite entries");
    }
    var_grid_ = Eigen::VectorXd::LinSpaced(grid_.n_var, 0.0, grid_.s_max);
    corr_grid_ = Eigen::VectorXd::LinSpaced(grid_.n_corr, -1.0, 1.0);
}

Eigen::VectorXd NonlinearityTable::pre_activation_grid() const {
    return Eigen::VectorXd::LinSpaced(grid_.n_pre, -grid_.u_max, grid_.u_max);
}

double NonlinearityTable::lookup(double s, double c) const {
    if (!std::isfinite(s) || !std::isfinite(c)) {
        throw NumericalError("table lookup with non-finite arguments");
    }
    if (s > grid_.s_max * (1.0 + 1e-12)) {
        throw NumericalError("layer variance " + std::to_string(s) +
                             " exceeds the table range; rebuild with a larger s_max");
    }
    const double s_min = var_grid_[1];  // smallest positive grid value
    const double sc = std::clamp(s, s_min, grid_.s_max);
    const double cc = std::clamp(c, -1.0, 1.0);

    const double ds = grid_.s_max / static_cast<double>(grid_.n_var - 1);
    const double dc = 2.0 / static_cast<double>(grid_.n_corr - 1);
    const int i0 = std::min(static_cast<int>(sc / ds), grid_.n_var - 2);
    const int j0 = std::min(static_cast<int>((cc + 1.0) / dc), grid_.n_corr - 2);
    const double ws = (sc - var_grid_[i0]) / ds;
    const double wc = (cc - corr_grid_[j0]) / dc;
    return (1.0 - ws) * ((1.0 - wc) * values_(i0, j0) + wc * values_(i0, j0 + 1)) +
           ws * ((1.0 - wc) * values_(i0 + 1, j0) + wc * values_(i0 + 1, j0 + 1));
}

NonlinearityTable build_table(Nonlinearity phi, const TableGrid& grid) {
    grid.validate();
    const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(grid.n_pre, -grid.u_max, grid.u_max);
    const Eigen::VectorXd var_grid = Eigen::VectorXd::LinSpaced(grid.n_var, 0.0, grid.s_max);
    const Eigen::VectorXd corr_grid = Eigen::VectorXd::LinSpaced(grid.n_corr, -1.0, 1.0);
    const Eigen::VectorXd marginal_w = (-0.5 * t.array().square()).exp().matrix();
    const double marginal_sum = marginal_w.sum();
    const Eigen::MatrixXd phis = phi_rows(phi, var_grid, t);

    // The correlated bivariate weight grid resolves the conditional ridge only
    // while its width sqrt(1-c^2) spans a few grid steps; tighter correlations
    // integrate the conditional coordinate directly.
    const double dt = 2.0 * grid.u_max / static_cast<double>(grid.n_pre - 1);
    const double min_ridge_sq = 6.25 * dt * dt;

    Eigen::MatrixXd values(grid.n_var, grid.n_corr);
    parallel_for(grid.n_corr, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
        Eigen::MatrixXd w(grid.n_pre, grid.n_pre);
        for (std::ptrdiff_t j = begin; j < end; ++j) {
            const double c = corr_grid[j];
            const double ridge_sq = 1.0 - c * c;
            if (ridge_sq >= min_ridge_sq) {
                const double inv = 1.0 / (2.0 * ridge_sq);
                for (Eigen::Index b = 0; b < grid.n_pre; ++b) {
                    w.col(b) = (-(t.array().square() - 2.0 * c * t[b] * t.array() +
                                  t[b] * t[b]) *
                                inv)
                                   .exp()
                                   .matrix();
                }
                const double denom = w.sum();
                const Eigen::MatrixXd pw = phis * w;
                values.col(j) = ((pw.array() * phis.array()).rowwise().sum() / denom).matrix();
            } else {
                // v | u = c u + sqrt(1-c^2) z with z standard normal, summed on
                // the same grid. Exact at c = +/-1.
                const double r = std::sqrt(std::max(0.0, ridge_sq));
                for (Eigen::Index i = 0; i < grid.n_var; ++i) {
                    const double root = std::sqrt(var_grid[i]);
                    double acc = 0.0;
                    for (Eigen::Index a = 0; a < grid.n_pre; ++a) {
                        const double phi_a = phis(i, a);
                        if (phi_a == 0.0 && phi == Nonlinearity::ReLU) {
                            continue;
                        }
                        double inner;
                        if (r == 0.0) {
                            inner = apply_phi(phi, root * c * t[a]);
                        } else {
                            Eigen::ArrayXd args = root * (c * t[a] + r * t.array());
                            double num = 0.0;
                            for (Eigen::Index b = 0; b < grid.n_pre; ++b) {
                                num += apply_phi(phi, args[b]) * marginal_w[b];
                            }
                            inner = num / marginal_sum;
                        }
                        acc += marginal_w[a] * phi_a * inner;
                    }
                    values(i, j) = acc / marginal_sum;
                }
            }
        }
    });
    return NonlinearityTable(phi, grid, std::move(values));
}

namespace {

constexpr char kTableMagic[9] = "LCNNGPT1";

struct TableHeader {
    char magic[9];
    std::int32_t phi = 0;
    std::int32_t n_pre = 0;
    std::int32_t n_var = 0;
    std::int32_t n_corr = 0;
    double u_max = 0.0;
    double s_max = 0.0;
};

std::string cache_file_name(Nonlinearity phi, const TableGrid& grid) {
    std::ostringstream name;
    name << to_string(phi) << "_" << grid.n_pre << "_" << grid.u_max << "_" << grid.n_var << "_"
         << grid.s_max << "_" << grid.n_corr << ".nngptab";
    return name.str();
}

}  // namespace

void NonlinearityTable::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write table cache: " + path);
    }
    TableHeader header;
    std::copy(std::begin(kTableMagic), std::end(kTableMagic), header.magic);
    header.phi = static_cast<std::int32_t>(phi_);
    header.n_pre = grid_.n_pre;
    header.n_var = grid_.n_var;
    header.n_corr = grid_.n_corr;
    header.u_max = grid_.u_max;
    header.s_max = grid_.s_max;
    out.write(reinterpret_cast<const char*>(&header), sizeof(header));
    out.write(reinterpret_cast<const char*>(values_.data()),
              static_cast<std::streamsize>(sizeof(double) * values_.size()));
    if (!out) {
        throw IoError("short write to table cache: " + path);
    }
}

NonlinearityTable NonlinearityTable::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open table cache: " + path);
    }
    TableHeader header;
    in.read(reinterpret_cast<char*>(&header), sizeof(header));
    if (!in || std::string(header.magic, 8) != std::string(kTableMagic, 8)) {
        throw IoError("table cache " + path + " has an unrecognized header");
    }
    TableGrid grid;
    grid.n_pre = header.n_pre;
    grid.n_var = header.n_var;
    grid.n_corr = header.n_corr;
    grid.u_max = header.u_max;
    grid.s_max = header.s_max;
    grid.validate();
    Eigen::MatrixXd values(grid.n_var, grid.n_corr);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(sizeof(double) * values.size()));
    if (!in) {
        throw IoError("table cache " + path + " is truncated");
    }
    return NonlinearityTable(static_cast<Nonlinearity>(header.phi), grid, std::move(values));
}

std::shared_ptr<const NonlinearityTable> cached_table(Nonlinearity phi, const TableGrid& grid,
                                                      const std::string& cache_dir) {
    static std::mutex mutex;
    static std::map<std::string, std::shared_ptr<const NonlinearityTable>> memo;

    const std::string key = cache_file_name(phi, grid);
    {
        std::lock_guard<std::mutex> lock(mutex);
        auto it = memo.find(key);
        if (it != memo.end()) {
            return it->second;
        }
    }

    std::string dir = cache_dir;
    if (dir.empty()) {
        if (const char* env = std::getenv("LOADCAST_TABLE_CACHE")) {
            dir = env;
        }
    }
    std::shared_ptr<const NonlinearityTable> table;
    if (!dir.empty()) {
        const std::filesystem::path path = std::filesystem::path(dir) / key;
        if (std::filesystem::exists(path)) {
            try {
                NonlinearityTable loaded = NonlinearityTable::load(path.string());
                if (loaded.phi() == phi && loaded.grid() == grid) {
                    table = std::make_shared<NonlinearityTable>(std::move(loaded));
                }
            } catch (const Error&) {
                // stale or damaged cache entry; rebuilt below
            }
        }
    }
    if (!table) {
        table = std::make_shared<NonlinearityTable>(build_table(phi, grid));
        if (!dir.empty()) {
            try {
                std::filesystem::create_directories(dir);
                table->save((std::filesystem::path(dir) / key).string());
            } catch (...) {
                // cache write failures are non-fatal
            }
        }
    }
    std::lock_guard<std::mutex> lock(mutex);
    memo[key] = table;
    return table;
}

double relu_moment(double s, double c) {
    const double cc = std::clamp(c, -1.0, 1.0);
    const double angle = std::acos(cc);
    return s / (2.0 * std::numbers::pi) *
           (std::sin(angle) + (std::numbers::pi - angle) * std::cos(angle));
}

double nngp_base_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime,
                        const NNGPConfig& config) {
    config.validate();
    if (x.size() != config.input_dim || x_prime.size() != config.input_dim) {
        throw ValidationError("nngp_base_kernel: input dimension mismatch");
    }
    return config.bias_prior_var +
           config.weight_prior_var * x.dot(x_prime) / static_cast<double>(config.input_dim);
}

double nngp_layer_step(double k_xy, double k_xx, double k_yy, const NNGPConfig& config,
                       const NonlinearityTable& table) {
    config.validate();
    if (std::abs(k_xx - k_yy) > 1e-9 * std::max(1.0, std::abs(k_xx))) {
        throw NumericalError(
            "layer step requires equal self-covariances (constant-norm pre-processing)");
    }
    if (config.phi == Nonlinearity::ReLU && config.analytic_relu) {
        const double s = std::max(k_xx, 0.0);
        const double c = s > 0.0 ? k_xy / s : 0.0;
        return config.bias_prior_var + config.weight_prior_var * relu_moment(s, c);
    }
    if (table.phi() != config.phi) {
        throw ValidationError("layer step: table was built for a different nonlinearity");
    }
    const double s_min = table.variance_grid()[1];
    const double s = std::clamp(k_xx, s_min, table.grid().s_max);
    if (k_xx > table.grid().s_max * (1.0 + 1e-12)) {
        throw NumericalError("layer variance " + std::to_string(k_xx) +
                             " exceeds the table range; rebuild with a larger s_max");
    }
    const double c = k_xy / s;
    return config.bias_prior_var + config.weight_prior_var * table.lookup(s, c);
}

Eigen::MatrixXd normalize_rows_to_constant_norm(const Eigen::MatrixXd& inputs) {
    if (!inputs.allFinite()) {
        throw ValidationError("nngp inputs must be finite");
    }
    const double target = std::sqrt(static_cast<double>(inputs.cols()));
    Eigen::MatrixXd out = inputs;
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        const double norm = inputs.row(i).norm();
        if (norm < 1e-300) {
            throw ValidationError("cannot norm-scale a zero input vector (row " +
                                  std::to_string(i) + ")");
        }
        out.row(i) *= target / norm;
    }
    return out;
}

namespace {

// Self-covariance path shared by every constant-norm input: s_0 and one value
// per layer.
std::vector<double> diag_recursion(const NNGPConfig& config, const NonlinearityTable& table) {
    std::vector<double> path;
    path.reserve(static_cast<std::size_t>(config.depth) + 1);
    double s = config.bias_prior_var + config.weight_prior_var;
    path.push_back(s);
    for (int l = 0; l < config.depth; ++l) {
        s = nngp_layer_step(s, s, s, config, table);
        path.push_back(s);
    }
    return path;
}

}  // namespace

Eigen::MatrixXd nngp_kernel_matrix(const Eigen::MatrixXd& inputs, const NNGPConfig& config,
                                   const NonlinearityTable& table) {
    config.validate();
    if (inputs.cols() != config.input_dim) {
        throw ValidationError("nngp_kernel_matrix: input dimension mismatch");
    }
    const Eigen::Index n = inputs.rows();
    Eigen::MatrixXd scaled = normalize_rows_to_constant_norm(inputs);
    Eigen::MatrixXd k = (scaled * scaled.transpose()) *
                        (config.weight_prior_var / static_cast<double>(config.input_dim));
    k.array() += config.bias_prior_var;

    const std::vector<double> path = diag_recursion(config, table);
    k.diagonal().setConstant(path[0]);

    for (int l = 0; l < config.depth; ++l) {
        const double s = path[static_cast<std::size_t>(l)];
        parallel_for(n, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
            for (std::ptrdiff_t i = begin; i < end; ++i) {
                for (Eigen::Index j = i + 1; j < n; ++j) {
                    k(i, j) = nngp_layer_step(k(i, j), s, s, config, table);
                }
            }
        });
        k.diagonal().setConstant(path[static_cast<std::size_t>(l) + 1]);
    }
    // Mirror the upper triangle for exact symmetry.
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            k(j, i) = k(i, j);
        }
    }
    return k;
}

NNGPModel NNGPModel::train(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& outputs,
                           const NNGPConfig& config,
                           std::shared_ptr<const NonlinearityTable> table) {
    config.validate();
    if (inputs.rows() != outputs.size()) {
        throw ValidationError("NNGP train: inputs and outputs size mismatch");
    }
    if (inputs.rows() < 1) {
        throw ValidationError("NNGP train: empty training set");
    }
    if (!outputs.allFinite()) {
        throw ValidationError("NNGP train: non-finite outputs");
    }
    if (!table) {
        throw ValidationError("NNGP train: missing nonlinearity table");
    }

    NNGPModel model;
    model.config_ = config;
    model.table_ = std::move(table);
    model.scaled_inputs_ = normalize_rows_to_constant_norm(inputs);
    model.outputs_ = outputs;
    model.y_mean_ = outputs.mean();
    model.kernel_ = nngp_kernel_matrix(inputs, config, *model.table_);
    model.diag_path_ = diag_recursion(config, *model.table_);

    double sigma_obs = config.observation_noise;
    if (sigma_obs < 0.0) {
        const double var_y =
            (outputs.array() - model.y_mean_).square().sum() /
            std::max<double>(1.0, static_cast<double>(outputs.size() - 1));
        sigma_obs = 1e-6 * (var_y > 1e-300 ? var_y : 1.0);
    }
    model.sigma_obs_ = sigma_obs;

    Eigen::MatrixXd kmat = model.kernel_;
    kmat.diagonal().array() += sigma_obs;
    try {
        CholResult chol = cholesky_with_jitter(kmat);
        model.chol_ = std::move(chol.llt);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) +
                             "; consider raising observation_noise for the NNGP fit");
    }
    model.alpha_ = model.chol_.solve((outputs.array() - model.y_mean_).matrix());
    return model;
}

PredictResult NNGPModel::predict(const Eigen::VectorXd& input) const {
    if (input.size() != config_.input_dim) {
        throw ValidationError("NNGP predict: input dimension mismatch");
    }
    Eigen::MatrixXd row = input.transpose();
    Eigen::MatrixXd scaled = normalize_rows_to_constant_norm(row);
    Eigen::VectorXd k =
        scaled_inputs_ * scaled.row(0).transpose() *
        (config_.weight_prior_var / static_cast<double>(config_.input_dim));
    k.array() += config_.bias_prior_var;
    for (int l = 0; l < config_.depth; ++l) {
        const double s = diag_path_[static_cast<std::size_t>(l)];
        for (Eigen::Index i = 0; i < k.size(); ++i) {
            k[i] = nngp_layer_step(k[i], s, s, config_, *table_);
        }
    }
    PredictResult out;
    out.mean = y_mean_ + k.dot(alpha_);
    const double prior = diag_path_.back();
    out.variance = std::max(0.0, prior - k.dot(chol_.solve(k)));
    return out;
}

Eigen::VectorXd NNGPModel::predict_mean_batch(const Eigen::MatrixXd& inputs) const {
    if (inputs.cols() != config_.input_dim) {
        throw ValidationError("NNGP batch predict: input dimension mismatch");
    }
    const Eigen::Index n = inputs.rows();
    Eigen::VectorXd means(n);
    parallel_for(n, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
        Eigen::MatrixXd chunk = inputs.middleRows(begin, end - begin);
        Eigen::MatrixXd scaled = normalize_rows_to_constant_norm(chunk);
        Eigen::MatrixXd k =
            scaled * scaled_inputs_.transpose() *
            (config_.weight_prior_var / static_cast<double>(config_.input_dim));
        k.array() += config_.bias_prior_var;
        for (int l = 0; l < config_.depth; ++l) {
            const double s = diag_path_[static_cast<std::size_t>(l)];
            for (Eigen::Index r = 0; r < k.rows(); ++r) {
                for (Eigen::Index c = 0; c < k.cols(); ++c) {
                    k(r, c) = nngp_layer_step(k(r, c), s, s, config_, *table_);
                }
            }
        }
        means.segment(begin, end - begin) = ((k * alpha_).array() + y_mean_).matrix();
    });
    return means;
}

}  // namespace loadcast
