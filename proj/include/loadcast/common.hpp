#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

namespace loadcast {

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    bool contains(double v) const { return lower <= v && v <= upper; }
    double width() const { return upper - lower; }
};

struct PredictResult {
    double mean = 0.0;
    double variance = 0.0;
};

// Derives an independent RNG stream from a base seed. Distinct stream ids give
// statistically independent generators (splitmix64 mixing).
std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream = 0);

// Inverse standard normal CDF (Wichura's AS241, double precision).
double normal_quantile(double p);

// Cholesky of a symmetric matrix with progressive jitter on failure
// (1e-10 .. 1e-6 times the mean diagonal). Throws NumericalError when even the
// largest jitter fails.
struct CholResult {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double jitter = 0.0;
};
CholResult cholesky_with_jitter(const Eigen::MatrixXd& m);

// Runs fn(begin, end) over [0, n) split across threads. jobs <= 0 means
// hardware concurrency. Falls back to a serial call for small n.
void parallel_for(std::ptrdiff_t n,
                  const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>& fn,
                  int jobs = 0);

// Shortest decimal form that round-trips a double (at least 12 significant
// digits per the dataset file contract).
std::string format_double(double v);

}  // namespace loadcast
