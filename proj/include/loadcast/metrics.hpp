#pragma once

#include <Eigen/Dense>
#include <vector>

#include "loadcast/common.hpp"

namespace loadcast {

// Mean absolute percentage error, returned as a fraction (0.1 == 10%).
double mape(const Eigen::VectorXd& actuals, const Eigen::VectorXd& points);

// Fraction of the 24 hourly actuals falling inside their interval; interval
// boundaries count as covered.
double coverage(const Eigen::VectorXd& actuals, const std::vector<Interval>& intervals);

struct DayEvaluation {
    int customer = 0;
    int day = 0;
    Eigen::VectorXd actuals;
    Eigen::VectorXd points;
    std::vector<Interval> intervals;
    double mape_value = 0.0;
    double cp = 0.0;
    int covered_count = 0;

    static DayEvaluation evaluate(int customer, int day, const Eigen::VectorXd& actuals,
                                  const Eigen::VectorXd& points,
                                  const std::vector<Interval>& intervals);
};

struct Quartiles {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

// Linear-interpolation quartiles for boxplot exports.
Quartiles quartiles(std::vector<double> values);

}  // namespace loadcast
