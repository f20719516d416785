#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace loadcast {

struct Line {
    int from = 0;
    int to = 0;
    double susceptance = 0.0;  // per-unit, strictly positive
};

// Grid topology used by the DC power-flow surrogate. The reference bus doubles
// as the slack bus absorbing the hourly injection imbalance.
struct BusSystem {
    int n_buses = 0;
    std::vector<Line> lines;
    int reference_bus = 0;

    // Throws ValidationError unless the graph is connected, susceptances are
    // strictly positive, there are no self-loops and the reference bus is in
    // range.
    void validate() const;

    // Dense nodal susceptance matrix (graph Laplacian weighted by line
    // susceptances).
    Eigen::MatrixXd susceptance_matrix() const;

    static BusSystem from_file(const std::string& path);
    void to_file(const std::string& path) const;
};

// Small built-in topologies used by the examples and tests.
BusSystem eight_bus_system();
BusSystem fourteen_bus_system();

// Solves B * theta = injections with theta[reference_bus] = 0. Injections must
// sum to zero within 1e-9.
Eigen::VectorXd solve_dc_power_flow(const BusSystem& system, const Eigen::VectorXd& injections);

// Shape knobs for the synthetic hourly load profile: a diurnal sinusoid, a
// weekly weekday/weekend factor, a seasonal sinusoid and lognormal
// multiplicative noise. Amplitudes must keep the deterministic part positive.
struct LoadProfileSpec {
    double base_load = 1.0;           // per-unit mean load per bus
    double bus_spread = 0.3;          // lognormal sigma of per-bus base factors
    double diurnal_amplitude = 0.35;  // fraction of base
    double diurnal_peak_hour = 18.0;
    double weekend_factor = 0.85;     // multiplier on Saturdays/Sundays
    double seasonal_amplitude = 0.25;
    double seasonal_peak_day = 15.0;  // mid-January peak (heating-driven)
    double noise_sigma = 0.08;        // lognormal sigma of hourly noise

    void validate() const;
};

// PV generation: truncated half-sine over daylight hours scaled by an AR(1)
// cloudiness process in [0, 1]. capacity_fraction = 0 disables PV entirely.
struct PvProfileSpec {
    double capacity_fraction = 0.4;  // of the bus base load
    double sunrise_hour = 6.0;
    double sunset_hour = 18.0;
    double seasonal_daylight_swing = 2.0;  // +/- hours across the year
    double cloud_persistence = 0.7;        // AR(1) coefficient
    double cloud_noise = 0.3;

    void validate() const;
};

struct HourlyDataset {
    Eigen::MatrixXd loads;   // hours x buses, per-unit (PV already subtracted)
    Eigen::MatrixXd angles;  // hours x buses, radians
    int reference_bus = 0;
    bool pv_adjusted = false;

    Eigen::Index n_hours() const { return loads.rows(); }
    Eigen::Index n_buses() const { return loads.cols(); }

    double theta_diff(Eigen::Index hour, int i, int k) const {
        return angles(hour, i) - angles(hour, k);
    }

    // Net injection vector implied by the recorded loads at one hour (loads
    // are consumption; the reference bus supplies the balance).
    Eigen::VectorXd injections_at(Eigen::Index hour) const;

    void validate() const;

    void to_csv(const std::string& path) const;
    static HourlyDataset from_csv(const std::string& path, int reference_bus);
};

// Simulates horizon_days of hourly system states. Deterministic given the
// seed; every hour satisfies the solve_dc_power_flow contract.
HourlyDataset generate_year(const BusSystem& system, const LoadProfileSpec& load_spec,
                            const PvProfileSpec& pv_spec, std::uint64_t seed,
                            int horizon_days = 365);

}  // namespace loadcast
