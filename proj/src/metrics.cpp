#include "loadcast/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "loadcast/errors.hpp"

namespace loadcast {

double mape(const Eigen::VectorXd& actuals, const Eigen::VectorXd& points) {
    if (actuals.size() != points.size()) {
        throw ValidationError("mape: actuals and points must have equal length");
    }
    if (actuals.size() == 0) {
        throw ValidationError("mape: empty input");
    }
    double sum = 0.0;
    for (Eigen::Index h = 0; h < actuals.size(); ++h) {
        if (actuals[h] == 0.0) {
            throw ValidationError("mape: actual load is zero at hour " + std::to_string(h));
        }
        sum += std::abs((actuals[h] - points[h]) / actuals[h]);
    }
    return sum / static_cast<double>(actuals.size());
}

double coverage(const Eigen::VectorXd& actuals, const std::vector<Interval>& intervals) {
    if (actuals.size() != 24 || intervals.size() != 24) {
        throw ValidationError("coverage: expects exactly 24 hourly entries");
    }
    int covered = 0;
    for (Eigen::Index h = 0; h < 24; ++h) {
        const Interval& iv = intervals[static_cast<std::size_t>(h)];
        if (iv.lower > iv.upper) {
            throw ValidationError("coverage: malformed interval (lower > upper) at hour " +
                                  std::to_string(h));
        }
        if (iv.contains(actuals[h])) {
            ++covered;
        }
    }
    return covered / 24.0;
}

DayEvaluation DayEvaluation::evaluate(int customer, int day, const Eigen::VectorXd& actuals,
                                      const Eigen::VectorXd& points,
                                      const std::vector<Interval>& intervals) {
    DayEvaluation out;
    out.customer = customer;
    out.day = day;
    out.actuals = actuals;
    out.points = points;
    out.intervals = intervals;
    out.mape_value = mape(actuals, points);
    out.cp = coverage(actuals, intervals);
    out.covered_count = static_cast<int>(std::lround(out.cp * 24.0));
    return out;
}

Quartiles quartiles(std::vector<double> values) {
    if (values.empty()) {
        throw ValidationError("quartiles: empty input");
    }
    std::sort(values.begin(), values.end());
    auto at = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, values.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return values[lo] * (1.0 - frac) + values[hi] * frac;
    };
    return Quartiles{values.front(), at(0.25), at(0.5), at(0.75), values.back()};
}

}  // namespace loadcast
