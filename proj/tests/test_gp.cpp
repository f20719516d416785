#include "doctest.h"

#include <cmath>
#include <random>

#include "loadcast/common.hpp"
#include "loadcast/errors.hpp"
#include "loadcast/gp.hpp"

using namespace loadcast;

namespace {

SEHyperParams make_hyper(double sf2, const Eigen::VectorXd& lambda, double sy2) {
    SEHyperParams h;
    h.process_var = sf2;
    h.length_scale_sq = lambda;
    h.noise_var = sy2;
    return h;
}

Eigen::MatrixXd random_inputs(int n, int d, std::uint64_t seed, double scale = 2.0) {
    std::mt19937_64 rng = seeded_rng(seed, 0);
    std::uniform_real_distribution<double> u(-scale, scale);
    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = u(rng);
    return x;
}

// Draws a latent function from the GP prior plus observation noise.
Eigen::VectorXd draw_from_gp(const Eigen::MatrixXd& X, const SEHyperParams& hyper,
                             std::uint64_t seed) {
    Eigen::MatrixXd k = se_gram(X, hyper);
    k.diagonal().array() += 1e-10;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    std::mt19937_64 rng = seeded_rng(seed, 1);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd z(X.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = g(rng);
    Eigen::VectorXd f = llt.matrixL() * z;
    if (hyper.noise_var > 0.0) {
        for (Eigen::Index i = 0; i < f.size(); ++i)
            f[i] += std::sqrt(hyper.noise_var) * g(rng);
    }
    return f;
}

}  // namespace

TEST_CASE("se_kernel hand values") {
    Eigen::VectorXd l1 = Eigen::VectorXd::Constant(1, 4.0);
    SEHyperParams h = make_hyper(1.0, l1, 0.0);
    Eigen::VectorXd a(1), b(1);
    a << 0.0;
    b << 2.0;
    CHECK(se_kernel(a, b, h) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(se_kernel(a, a, h) == doctest::Approx(1.0));
    CHECK(se_kernel(a, b, h) == se_kernel(b, a, h));

    // Flat limit: enormous length scale makes every pair look identical.
    SEHyperParams flat = make_hyper(2.5, Eigen::VectorXd::Constant(1, 1e12), 0.0);
    CHECK(se_kernel(a, b, flat) == doctest::Approx(2.5).epsilon(1e-9));

    SEHyperParams bad = make_hyper(1.0, Eigen::VectorXd::Constant(1, -1.0), 0.0);
    CHECK_THROWS_AS(se_kernel(a, b, bad), ValidationError);
    Eigen::VectorXd wrong(2);
    wrong << 0.0, 0.0;
    CHECK_THROWS_AS(se_kernel(a, wrong, h), ValidationError);
}

TEST_CASE("gram equals pairwise kernel") {
    Eigen::MatrixXd x = random_inputs(15, 3, 99);
    SEHyperParams h = make_hyper(1.7, Eigen::VectorXd::Constant(3, 0.8), 0.0);
    Eigen::MatrixXd gram = se_gram(x, h);
    for (int i = 0; i < 15; ++i)
        for (int j = 0; j < 15; ++j)
            CHECK(gram(i, j) ==
                  doctest::Approx(se_kernel(x.row(i), x.row(j), h)).epsilon(1e-10));
}

TEST_CASE("mle recovers known hyperparameters within half a log unit") {
    SEHyperParams truth = make_hyper(1.0, Eigen::VectorXd::Constant(1, 1.0), 0.01);
    Eigen::MatrixXd x = random_inputs(200, 1, 17, 12.0);
    Eigen::VectorXd y = draw_from_gp(x, truth, 17);
    SEHyperParams fitted = fit_mle(x, y, default_init(x, y));
    CHECK(std::abs(std::log(fitted.process_var) - std::log(truth.process_var)) < 0.5);
    CHECK(std::abs(std::log(fitted.length_scale_sq[0]) -
                   std::log(truth.length_scale_sq[0])) < 0.5);
    CHECK(std::abs(std::log(fitted.noise_var) - std::log(truth.noise_var)) < 0.5);
}

TEST_CASE("constant outputs drive the process variance to its floor") {
    Eigen::MatrixXd x = random_inputs(40, 2, 3);
    Eigen::VectorXd y = Eigen::VectorXd::Constant(40, 5.0);
    SEHyperParams fitted = fit_mle(x, y, default_init(x, y));
    CHECK(fitted.process_var < 1e-6);
}

TEST_CASE("zero correction vector changes nothing") {
    Eigen::MatrixXd x = random_inputs(30, 2, 5);
    SEHyperParams truth = make_hyper(1.0, Eigen::VectorXd::Constant(2, 1.0), 0.05);
    Eigen::VectorXd y = draw_from_gp(x, truth, 5);
    SEHyperParams a = fit_mle(x, y, default_init(x, y));
    SEHyperParams b = fit_mle(x, y, default_init(x, y), Eigen::VectorXd::Zero(30));
    CHECK(a.process_var == b.process_var);
    CHECK(a.noise_var == b.noise_var);
    CHECK((a.length_scale_sq - b.length_scale_sq).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit never returns a likelihood below the init") {
    Eigen::MatrixXd x = random_inputs(50, 2, 23);
    SEHyperParams truth = make_hyper(2.0, Eigen::VectorXd::Constant(2, 0.5), 0.1);
    Eigen::VectorXd y = draw_from_gp(x, truth, 23);
    SEHyperParams init = make_hyper(0.5, Eigen::VectorXd::Constant(2, 4.0), 0.3);
    SEHyperParams fitted = fit_mle(x, y, init);
    Eigen::VectorXd yc = y.array() - y.mean();
    CHECK(log_marginal_likelihood(x, yc, fitted) >=
          log_marginal_likelihood(x, yc, init) - 1e-9);
}

TEST_CASE("optimizer trace is monotone nondecreasing") {
    Eigen::MatrixXd x = random_inputs(60, 1, 31);
    SEHyperParams truth = make_hyper(1.0, Eigen::VectorXd::Constant(1, 1.0), 0.05);
    Eigen::VectorXd y = draw_from_gp(x, truth, 31);
    std::vector<double> trace;
    FitOptions opts;
    opts.lml_trace = &trace;
    fit_mle(x, y, default_init(x, y), Eigen::VectorXd(), opts);
    REQUIRE(trace.size() > 1);
    for (std::size_t i = 1; i < trace.size(); ++i) {
        CHECK(trace[i] >= trace[i - 1] - 1e-12);
    }
}

TEST_CASE("prediction interpolates noise-free data") {
    Eigen::MatrixXd x = random_inputs(25, 2, 9);
    SEHyperParams h = make_hyper(1.0, Eigen::VectorXd::Constant(2, 1.0), 0.0);
    Eigen::VectorXd y = draw_from_gp(x, h, 9);
    GPModel model = GPModel::train(x, y, h);
    for (int i = 0; i < 25; i += 5) {
        PredictResult r = gp_predict(model, x.row(i));
        CHECK(r.mean == doctest::Approx(y[i]).epsilon(1e-8));
        CHECK(r.variance <= 1e-6);
    }
}

TEST_CASE("prediction reverts to the prior far away") {
    Eigen::MatrixXd x = random_inputs(20, 2, 13);
    SEHyperParams h = make_hyper(1.3, Eigen::VectorXd::Constant(2, 1.0), 0.01);
    Eigen::VectorXd y = draw_from_gp(x, h, 13);
    GPModel model = GPModel::train(x, y, h);
    Eigen::VectorXd far = Eigen::VectorXd::Constant(2, 500.0);
    PredictResult r = gp_predict(model, far);
    CHECK(std::abs(r.mean) < 1e-9);
    CHECK(r.variance == doctest::Approx(1.3).epsilon(1e-9));
}

TEST_CASE("duplicate rows with zero noise still predict finitely") {
    Eigen::MatrixXd x(4, 1);
    x << 0.0, 0.0, 1.0, 2.0;
    Eigen::VectorXd y(4);
    y << 1.0, 1.0, 2.0, 3.0;
    SEHyperParams h = make_hyper(1.0, Eigen::VectorXd::Constant(1, 1.0), 0.0);
    GPModel model = GPModel::train(x, y, h);
    CHECK(model.jitter > 0.0);
    PredictResult r = gp_predict(model, x.row(0));
    CHECK(std::isfinite(r.mean));
    CHECK(std::isfinite(r.variance));
}

TEST_CASE("predictive variance stays within the prior budget") {
    Eigen::MatrixXd x = random_inputs(40, 3, 21);
    SEHyperParams h = make_hyper(2.0, Eigen::VectorXd::Constant(3, 0.7), 0.1);
    Eigen::VectorXd y = draw_from_gp(x, h, 21);
    GPModel model = GPModel::train(x, y, h);
    std::mt19937_64 rng = seeded_rng(77, 0);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int t = 0; t < 50; ++t) {
        Eigen::VectorXd p(3);
        for (int k = 0; k < 3; ++k) p[k] = u(rng);
        PredictResult r = gp_predict(model, p);
        CHECK(r.variance >= 0.0);
        CHECK(r.variance <= h.process_var + h.noise_var + 1e-9);
    }
}

TEST_CASE("posterior mean gradient matches finite differences") {
    for (int d : {1, 3, 7}) {
        Eigen::MatrixXd x = random_inputs(30 + 5 * d, d, 100 + static_cast<unsigned>(d));
        SEHyperParams h = make_hyper(1.5, Eigen::VectorXd::Constant(d, 0.9), 0.05);
        Eigen::VectorXd y = draw_from_gp(x, h, 100 + static_cast<unsigned>(d));
        GPModel model = GPModel::train(x, y, h, Eigen::VectorXd(), y.mean());

        std::mt19937_64 rng = seeded_rng(200 + static_cast<unsigned>(d), 0);
        std::uniform_real_distribution<double> u(-1.5, 1.5);
        const double step = 1e-5;
        for (int t = 0; t < 20; ++t) {
            Eigen::VectorXd p(d);
            for (int k = 0; k < d; ++k) p[k] = u(rng);
            Eigen::VectorXd analytic = posterior_mean_gradient(model, p);
            for (int k = 0; k < d; ++k) {
                Eigen::VectorXd hi = p, lo = p;
                hi[k] += step;
                lo[k] -= step;
                const double fd =
                    (gp_predict(model, hi).mean - gp_predict(model, lo).mean) / (2.0 * step);
                const double scale = std::max({std::abs(fd), std::abs(analytic[k]), 1e-8});
                CHECK(std::abs(analytic[k] - fd) / scale < 1e-4);
            }
        }
    }
}

TEST_CASE("flat posterior has zero gradient") {
    Eigen::MatrixXd x = random_inputs(20, 2, 41);
    Eigen::VectorXd y = Eigen::VectorXd::Constant(20, 3.0);
    SEHyperParams h = make_hyper(1.0, Eigen::VectorXd::Constant(2, 1.0), 0.0);
    GPModel model = GPModel::train(x, y, h, Eigen::VectorXd(), 3.0);
    Eigen::VectorXd g = posterior_mean_gradient(model, Eigen::VectorXd::Zero(2));
    CHECK(g.lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("antisymmetric pair pulls the gradient along the separation axis") {
    Eigen::MatrixXd x(2, 2);
    x << -1.0, 0.0, 1.0, 0.0;
    Eigen::VectorXd y(2);
    y << -1.0, 1.0;
    SEHyperParams h = make_hyper(1.0, Eigen::VectorXd::Constant(2, 1.0), 1e-6);
    GPModel model = GPModel::train(x, y, h);
    Eigen::VectorXd g = posterior_mean_gradient(model, Eigen::VectorXd::Zero(2));
    CHECK(g[0] > 0.0);
    CHECK(std::abs(g[1]) < 1e-12);
}

TEST_CASE("prediction is translation invariant") {
    Eigen::MatrixXd x = random_inputs(30, 2, 55);
    SEHyperParams h = make_hyper(1.0, Eigen::VectorXd::Constant(2, 1.2), 0.02);
    Eigen::VectorXd y = draw_from_gp(x, h, 55);
    GPModel base = GPModel::train(x, y, h);
    Eigen::VectorXd shift = Eigen::VectorXd::Constant(2, 12.75);
    GPModel moved = GPModel::train(x.rowwise() + shift.transpose(), y, h);
    std::mt19937_64 rng = seeded_rng(56, 0);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int t = 0; t < 20; ++t) {
        Eigen::VectorXd p(2);
        p << u(rng), u(rng);
        PredictResult a = gp_predict(base, p);
        PredictResult b = gp_predict(moved, p + shift);
        CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-10));
        CHECK(a.variance == doctest::Approx(b.variance).epsilon(1e-10));
    }
}
