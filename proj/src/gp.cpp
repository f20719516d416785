#include "loadcast/gp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

#include "loadcast/errors.hpp"

namespace loadcast {

namespace {

constexpr double kLogParamMin = -30.0;
constexpr double kLogParamMax = 30.0;

Eigen::VectorXd column_std(const Eigen::MatrixXd& X) {
    Eigen::VectorXd mean = X.colwise().mean();
    Eigen::VectorXd var = ((X.rowwise() - mean.transpose()).array().square().colwise().sum() /
                           std::max<double>(1.0, static_cast<double>(X.rows() - 1)))
                              .transpose();
    return var.cwiseMax(1e-12).cwiseSqrt();
}

// Negative log marginal likelihood objective over log-parameters. Layout:
// [log Lambda_1..d, log sigma_f^2, log sigma_y^2, (log sigma_x^2 per dim when
// a gradient matrix is present)]. Outputs are assumed pre-standardized.
class MleObjective {
public:
    MleObjective(const Eigen::MatrixXd& X, Eigen::VectorXd yc,
                 Eigen::VectorXd fixed_correction, const Eigen::MatrixXd* grad_matrix)
        : X_(X), yc_(std::move(yc)), fixed_correction_(std::move(fixed_correction)),
          grad_matrix_(grad_matrix), n_(X.rows()), d_(X.cols()) {
        sqdiff_.reserve(static_cast<std::size_t>(d_));
        for (Eigen::Index k = 0; k < d_; ++k) {
            Eigen::MatrixXd dk(n_, n_);
            for (Eigen::Index i = 0; i < n_; ++i) {
                dk.col(i) = (X_.col(k).array() - X_(i, k)).square();
            }
            sqdiff_.push_back(std::move(dk));
        }
        if (grad_matrix_ != nullptr) {
            grad_sq_ = grad_matrix_->array().square();
        }
    }

    Eigen::Index n_params() const { return d_ + 2 + (grad_matrix_ ? d_ : 0); }

    // Returns the objective value; fills grad. Non-finite or non-factorizable
    // iterates return +inf so the line search backs off.
    double eval(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
        grad.setZero(n_params());
        Eigen::VectorXd lambda = theta.head(d_).array().exp();
        const double sf2 = std::exp(theta[d_]);
        const double sy2 = std::exp(theta[d_ + 1]);

        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_, n_);
        for (Eigen::Index k = 0; k < d_; ++k) {
            m.noalias() += sqdiff_[static_cast<std::size_t>(k)] / lambda[k];
        }
        Eigen::MatrixXd c = sf2 * (-0.5 * m.array()).exp().matrix();

        Eigen::MatrixXd kmat = c;
        kmat.diagonal().array() += sy2;
        if (fixed_correction_.size() > 0) {
            kmat.diagonal() += fixed_correction_;
        }
        Eigen::VectorXd sx2;
        if (grad_matrix_ != nullptr) {
            sx2 = theta.tail(d_).array().exp();
            kmat.diagonal() += grad_sq_.matrix() * sx2;
        }

        Eigen::LLT<Eigen::MatrixXd> llt(kmat);
        if (llt.info() != Eigen::Success) {
            const double scale = kmat.diagonal().mean();
            bool ok = false;
            for (double rel = 1e-10; rel <= 1e-6 + 1e-18; rel *= 10.0) {
                Eigen::MatrixXd jittered = kmat;
                jittered.diagonal().array() += rel * scale;
                llt.compute(jittered);
                if (llt.info() == Eigen::Success) {
                    ok = true;
                    break;
                }
            }
            if (!ok) {
                return std::numeric_limits<double>::infinity();
            }
        }

        Eigen::VectorXd alpha = llt.solve(yc_);
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < n_; ++i) {
            logdet += std::log(llt.matrixLLT()(i, i));
        }
        const double f = 0.5 * yc_.dot(alpha) + logdet +
                         0.5 * static_cast<double>(n_) * std::log(2.0 * std::numbers::pi);
        if (!std::isfinite(f)) {
            return std::numeric_limits<double>::infinity();
        }

        // W = K^-1 - alpha alpha^T; df/dtheta = 0.5 tr(W dK/dtheta).
        Eigen::MatrixXd w = llt.solve(Eigen::MatrixXd::Identity(n_, n_));
        w.noalias() -= alpha * alpha.transpose();

        for (Eigen::Index k = 0; k < d_; ++k) {
            const double s = (w.array() * c.array() *
                              sqdiff_[static_cast<std::size_t>(k)].array())
                                 .sum();
            grad[k] = 0.5 * s / (2.0 * lambda[k]);
        }
        grad[d_] = 0.5 * (w.array() * c.array()).sum();
        grad[d_ + 1] = 0.5 * sy2 * w.trace();
        if (grad_matrix_ != nullptr) {
            for (Eigen::Index k = 0; k < d_; ++k) {
                const double s = (w.diagonal().array() * grad_sq_.col(k)).sum();
                grad[d_ + 2 + k] = 0.5 * sx2[k] * s;
            }
        }
        return f;
    }

private:
    const Eigen::MatrixXd& X_;
    Eigen::VectorXd yc_;
    Eigen::VectorXd fixed_correction_;
    const Eigen::MatrixXd* grad_matrix_;
    Eigen::Index n_, d_;
    std::vector<Eigen::MatrixXd> sqdiff_;
    Eigen::ArrayXXd grad_sq_;
};

struct LbfgsResult {
    Eigen::VectorXd theta;
    double f = std::numeric_limits<double>::infinity();
    std::vector<double> trace;  // objective value per accepted iterate
};

LbfgsResult lbfgs_minimize(const MleObjective& obj, Eigen::VectorXd theta, int max_iterations,
                           double tolerance) {
    const Eigen::Index p = theta.size();
    LbfgsResult out;
    Eigen::VectorXd grad(p), new_grad(p);
    double f = obj.eval(theta, grad);
    if (!std::isfinite(f)) {
        out.theta = theta;
        out.f = f;
        return out;
    }
    out.trace.push_back(f);

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    const std::size_t memory = 8;

    for (int it = 0; it < max_iterations; ++it) {
        // Two-loop recursion.
        Eigen::VectorXd q = grad;
        std::vector<double> rho(s_hist.size()), a(s_hist.size());
        for (std::size_t j = s_hist.size(); j-- > 0;) {
            rho[j] = 1.0 / y_hist[j].dot(s_hist[j]);
            a[j] = rho[j] * s_hist[j].dot(q);
            q -= a[j] * y_hist[j];
        }
        if (!s_hist.empty()) {
            const double gamma =
                s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            q *= gamma;
        }
        for (std::size_t j = 0; j < s_hist.size(); ++j) {
            const double b = rho[j] * y_hist[j].dot(q);
            q += (a[j] - b) * s_hist[j];
        }
        Eigen::VectorXd direction = -q;
        double slope = grad.dot(direction);
        if (!(slope < 0.0)) {
            direction = -grad;
            slope = grad.dot(direction);
            if (!(slope < 0.0)) {
                break;
            }
        }

        // Armijo backtracking keeps the objective monotone.
        double step = 1.0;
        double new_f = std::numeric_limits<double>::infinity();
        Eigen::VectorXd new_theta;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            new_theta = (theta + step * direction)
                            .cwiseMax(kLogParamMin)
                            .cwiseMin(kLogParamMax);
            new_f = obj.eval(new_theta, new_grad);
            if (std::isfinite(new_f) && new_f <= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            break;
        }

        Eigen::VectorXd s = new_theta - theta;
        Eigen::VectorXd y = new_grad - grad;
        if (y.dot(s) > 1e-12) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            if (s_hist.size() > memory) {
                s_hist.pop_front();
                y_hist.pop_front();
            }
        }

        const double improvement = f - new_f;
        theta = new_theta;
        f = new_f;
        grad = new_grad;
        out.trace.push_back(f);
        if (grad.lpNorm<Eigen::Infinity>() < 1e-6 ||
            improvement < tolerance * (1.0 + std::abs(f))) {
            break;
        }
    }
    out.theta = theta;
    out.f = f;
    return out;
}

struct StandardizedData {
    Eigen::VectorXd yc;      // centered, scaled outputs
    double scale = 1.0;      // multiplies variances back on exit
};

StandardizedData standardize(const Eigen::VectorXd& Y) {
    StandardizedData out;
    const double mean = Y.mean();
    out.yc = Y.array() - mean;
    const double sd = std::sqrt(out.yc.squaredNorm() /
                                std::max<double>(1.0, static_cast<double>(Y.size() - 1)));
    out.scale = sd > 1e-12 ? sd : 1.0;
    out.yc /= out.scale;
    return out;
}

std::vector<Eigen::VectorXd> multistart_grid(const Eigen::MatrixXd& X, int count,
                                             bool with_input_noise) {
    const Eigen::Index d = X.cols();
    Eigen::VectorXd std_x = column_std(X);
    struct Start {
        double ell_factor, sf2, sy2;
    };
    const Start grid[5] = {
        {1.0, 1.0, 0.1}, {0.1, 1.0, 0.1}, {10.0, 1.0, 0.1}, {1.0, 0.5, 0.5}, {3.0, 1.0, 0.01},
    };
    std::vector<Eigen::VectorXd> starts;
    const int total = std::clamp(count, 0, 5);
    for (int g = 0; g < total; ++g) {
        Eigen::VectorXd theta(d + 2 + (with_input_noise ? d : 0));
        for (Eigen::Index k = 0; k < d; ++k) {
            const double ell = grid[g].ell_factor * std_x[k];
            theta[k] = std::log(ell * ell);
        }
        theta[d] = std::log(grid[g].sf2);
        theta[d + 1] = std::log(grid[g].sy2);
        if (with_input_noise) {
            for (Eigen::Index k = 0; k < d; ++k) {
                theta[d + 2 + k] = std::log(0.01 * std_x[k] * std_x[k]);
            }
        }
        starts.push_back(std::move(theta));
    }
    return starts;
}

Eigen::VectorXd clamp_theta(Eigen::VectorXd theta) {
    return theta.cwiseMax(kLogParamMin).cwiseMin(kLogParamMax);
}

void check_inputs(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y) {
    if (X.rows() != Y.size()) {
        throw ValidationError("GP fit: X rows and Y length must match");
    }
    if (X.rows() < 2) {
        throw ValidationError("GP fit: need at least 2 observations");
    }
    if (!X.allFinite() || !Y.allFinite()) {
        throw ValidationError("GP fit: non-finite training data");
    }
}

}  // namespace

void SEHyperParams::validate() const {
    if (!(process_var > 0.0)) {
        throw ValidationError("process variance must be strictly positive");
    }
    if (length_scale_sq.size() == 0 || (length_scale_sq.array() <= 0.0).any()) {
        throw ValidationError("length scales must be strictly positive");
    }
    if (noise_var < 0.0) {
        throw ValidationError("noise variance must be nonnegative");
    }
}

double se_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime,
                 const SEHyperParams& hyper) {
    hyper.validate();
    if (x.size() != x_prime.size() || x.size() != hyper.length_scale_sq.size()) {
        throw ValidationError("se_kernel: dimension mismatch");
    }
    const double q = ((x - x_prime).array().square() / hyper.length_scale_sq.array()).sum();
    return hyper.process_var * std::exp(-0.5 * q);
}

Eigen::MatrixXd se_gram(const Eigen::MatrixXd& X, const SEHyperParams& hyper) {
    hyper.validate();
    if (X.cols() != hyper.length_scale_sq.size()) {
        throw ValidationError("se_gram: dimension mismatch");
    }
    const Eigen::Index n = X.rows();
    Eigen::MatrixXd scaled = X;
    for (Eigen::Index k = 0; k < X.cols(); ++k) {
        scaled.col(k) /= std::sqrt(hyper.length_scale_sq[k]);
    }
    Eigen::VectorXd sq = scaled.rowwise().squaredNorm();
    Eigen::MatrixXd m = sq.replicate(1, n) + sq.transpose().replicate(n, 1);
    m.noalias() -= 2.0 * scaled * scaled.transpose();
    Eigen::MatrixXd gram =
        hyper.process_var * (-0.5 * m.array().max(0.0)).exp().matrix();
    return gram.selfadjointView<Eigen::Lower>();
}

Eigen::VectorXd se_cross(const Eigen::MatrixXd& X, const Eigen::VectorXd& x_star,
                         const SEHyperParams& hyper) {
    hyper.validate();
    if (X.cols() != x_star.size() || X.cols() != hyper.length_scale_sq.size()) {
        throw ValidationError("se_cross: dimension mismatch");
    }
    Eigen::MatrixXd diff = X.rowwise() - x_star.transpose();
    Eigen::VectorXd q =
        diff.array().square().matrix() * hyper.length_scale_sq.cwiseInverse();
    return hyper.process_var * (-0.5 * q.array()).exp().matrix();
}

GPModel GPModel::train(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                       const SEHyperParams& hyper, const Eigen::VectorXd& correction,
                       double y_mean) {
    check_inputs(X, Y);
    hyper.validate();
    if (correction.size() != 0 && correction.size() != X.rows()) {
        throw ValidationError("noise correction length must match training size");
    }
    if (correction.size() != 0 && (correction.array() < 0.0).any()) {
        throw ValidationError("noise correction entries must be nonnegative");
    }
    GPModel model;
    model.hyper = hyper;
    model.X = X;
    model.Y = Y;
    model.y_mean = y_mean;
    model.noise_correction = correction;
    model.gram = se_gram(X, hyper);

    Eigen::MatrixXd kmat = model.gram;
    kmat.diagonal().array() += hyper.noise_var;
    if (correction.size() != 0) {
        kmat.diagonal() += correction;
    }
    CholResult chol = cholesky_with_jitter(kmat);
    model.chol = std::move(chol.llt);
    model.jitter = chol.jitter;
    model.alpha = model.chol.solve((Y.array() - y_mean).matrix());
    return model;
}

PredictResult gp_predict(const GPModel& model, const Eigen::VectorXd& x_star) {
    if (x_star.size() != model.X.cols()) {
        throw ValidationError("gp_predict: test input dimension mismatch");
    }
    Eigen::VectorXd k = se_cross(model.X, x_star, model.hyper);
    PredictResult out;
    out.mean = model.y_mean + k.dot(model.alpha);
    Eigen::VectorXd v = model.chol.solve(k);
    out.variance = std::max(0.0, model.hyper.process_var - k.dot(v));
    return out;
}

Eigen::VectorXd posterior_mean_gradient(const GPModel& model, const Eigen::VectorXd& x) {
    if (x.size() != model.X.cols()) {
        throw ValidationError("posterior_mean_gradient: input dimension mismatch");
    }
    Eigen::VectorXd k = se_cross(model.X, x, model.hyper);
    Eigen::VectorXd weighted = k.cwiseProduct(model.alpha);
    Eigen::VectorXd grad =
        (model.X.rowwise() - x.transpose()).transpose() * weighted;
    return grad.cwiseQuotient(model.hyper.length_scale_sq);
}

double log_marginal_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& yc,
                               const SEHyperParams& hyper, const Eigen::VectorXd& correction) {
    check_inputs(X, yc);
    Eigen::MatrixXd kmat = se_gram(X, hyper);
    kmat.diagonal().array() += hyper.noise_var;
    if (correction.size() != 0) {
        kmat.diagonal() += correction;
    }
    CholResult chol = cholesky_with_jitter(kmat);
    Eigen::VectorXd alpha = chol.llt.solve(yc);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        logdet += std::log(chol.llt.matrixLLT()(i, i));
    }
    return -0.5 * yc.dot(alpha) - logdet -
           0.5 * static_cast<double>(X.rows()) * std::log(2.0 * std::numbers::pi);
}

SEHyperParams fit_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                      const SEHyperParams& init, const Eigen::VectorXd& correction,
                      const FitOptions& options) {
    check_inputs(X, Y);
    init.validate();
    if (init.length_scale_sq.size() != X.cols()) {
        throw ValidationError("fit_mle: init length scale dimension mismatch");
    }

    StandardizedData std_data = standardize(Y);
    const double s2 = std_data.scale * std_data.scale;
    Eigen::VectorXd corr_std;
    if (correction.size() != 0) {
        if (correction.size() != X.rows()) {
            throw ValidationError("fit_mle: correction length mismatch");
        }
        corr_std = correction / s2;
    }
    MleObjective obj(X, std_data.yc, corr_std, nullptr);

    const Eigen::Index d = X.cols();
    Eigen::VectorXd init_theta(d + 2);
    init_theta.head(d) = init.length_scale_sq.array().log();
    init_theta[d] = std::log(init.process_var / s2);
    init_theta[d + 1] = std::log(std::max(init.noise_var / s2, 1e-30));
    std::vector<Eigen::VectorXd> starts{clamp_theta(init_theta)};
    for (auto& g : multistart_grid(X, options.multistarts, false)) {
        starts.push_back(clamp_theta(std::move(g)));
    }

    LbfgsResult best;
    bool any = false;
    for (const auto& start : starts) {
        LbfgsResult res = lbfgs_minimize(obj, start, options.max_iterations, options.tolerance);
        if (std::isfinite(res.f) && (!any || res.f < best.f)) {
            best = std::move(res);
            any = true;
        }
    }
    if (!any) {
        throw NumericalError(
            "fit_mle: no start produced a factorizable covariance; best-so-far unavailable");
    }
    if (options.lml_trace != nullptr) {
        options.lml_trace->clear();
        for (double f : best.trace) {
            options.lml_trace->push_back(-f);  // objective is negative LML
        }
    }

    SEHyperParams out;
    out.length_scale_sq = best.theta.head(d).array().exp();
    out.process_var = std::exp(best.theta[d]) * s2;
    out.noise_var = std::exp(best.theta[d + 1]) * s2;
    return out;
}

SEHyperParams default_init(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y) {
    SEHyperParams init;
    Eigen::VectorXd std_x = column_std(X);
    init.length_scale_sq = std_x.array().square();
    const double vy = (Y.array() - Y.mean()).square().sum() /
                      std::max<double>(1.0, static_cast<double>(Y.size() - 1));
    init.process_var = vy > 1e-12 ? vy : 1.0;
    init.noise_var = 0.1 * init.process_var;
    return init;
}

GPModel fit_gp_model(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                     const FitOptions& options) {
    SEHyperParams hyper = fit_mle(X, Y, default_init(X, Y), Eigen::VectorXd(), options);
    return GPModel::train(X, Y, hyper, Eigen::VectorXd(), Y.mean());
}

// Joint fit of kernel hyperparameters and per-dimension input-noise variances,
// holding the posterior-mean gradient matrix fixed (used by the noisy-input
// training loop). Warm-started from the supplied values, single start.
std::pair<SEHyperParams, Eigen::VectorXd> fit_mle_with_input_noise(
    const Eigen::MatrixXd& X, const Eigen::VectorXd& Y, const Eigen::MatrixXd& G,
    const SEHyperParams& init_hyper, const Eigen::VectorXd& init_input_noise,
    const FitOptions& options) {
    check_inputs(X, Y);
    init_hyper.validate();
    if (G.rows() != X.rows() || G.cols() != X.cols()) {
        throw ValidationError("input-noise fit: gradient matrix shape mismatch");
    }

    StandardizedData std_data = standardize(Y);
    const double s2 = std_data.scale * std_data.scale;
    Eigen::MatrixXd g_std = G / std_data.scale;
    MleObjective obj(X, std_data.yc, Eigen::VectorXd(), &g_std);

    const Eigen::Index d = X.cols();
    Eigen::VectorXd theta(2 * d + 2);
    theta.head(d) = init_hyper.length_scale_sq.array().log();
    theta[d] = std::log(init_hyper.process_var / s2);
    theta[d + 1] = std::log(std::max(init_hyper.noise_var / s2, 1e-30));
    theta.tail(d) = init_input_noise.array().max(1e-30).log();

    LbfgsResult res =
        lbfgs_minimize(obj, clamp_theta(theta), options.max_iterations, options.tolerance);
    if (!std::isfinite(res.f)) {
        throw NumericalError("input-noise fit failed to evaluate the likelihood");
    }
    SEHyperParams hyper;
    hyper.length_scale_sq = res.theta.head(d).array().exp();
    hyper.process_var = std::exp(res.theta[d]) * s2;
    hyper.noise_var = std::exp(res.theta[d + 1]) * s2;
    Eigen::VectorXd sx2 = res.theta.tail(d).array().exp();
    return {hyper, sx2};
}

}  // namespace loadcast
