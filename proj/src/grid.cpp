#include "loadcast/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "loadcast/common.hpp"
#include "loadcast/errors.hpp"

namespace loadcast {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void check_connected(const BusSystem& system) {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(system.n_buses));
    for (const Line& line : system.lines) {
        adj[static_cast<std::size_t>(line.from)].push_back(line.to);
        adj[static_cast<std::size_t>(line.to)].push_back(line.from);
    }
    std::vector<char> seen(static_cast<std::size_t>(system.n_buses), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
        const int v = stack.back();
        stack.pop_back();
        for (int w : adj[static_cast<std::size_t>(v)]) {
            if (!seen[static_cast<std::size_t>(w)]) {
                seen[static_cast<std::size_t>(w)] = 1;
                ++count;
                stack.push_back(w);
            }
        }
    }
    if (count != system.n_buses) {
        throw ValidationError("bus system graph is not connected");
    }
}

}  // namespace

void BusSystem::validate() const {
    if (n_buses < 2) {
        throw ValidationError("bus system needs at least 2 buses");
    }
    if (reference_bus < 0 || reference_bus >= n_buses) {
        throw ValidationError("reference bus index out of range");
    }
    if (lines.empty()) {
        throw ValidationError("bus system has no lines");
    }
    for (const Line& line : lines) {
        if (line.from < 0 || line.from >= n_buses || line.to < 0 || line.to >= n_buses) {
            throw ValidationError("line endpoint out of range");
        }
        if (line.from == line.to) {
            throw ValidationError("self-loop line on bus " + std::to_string(line.from));
        }
        if (!(line.susceptance > 0.0)) {
            throw ValidationError("line susceptance must be strictly positive");
        }
    }
    check_connected(*this);
}

Eigen::MatrixXd BusSystem::susceptance_matrix() const {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n_buses, n_buses);
    for (const Line& line : lines) {
        b(line.from, line.from) += line.susceptance;
        b(line.to, line.to) += line.susceptance;
        b(line.from, line.to) -= line.susceptance;
        b(line.to, line.from) -= line.susceptance;
    }
    return b;
}

BusSystem BusSystem::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open system file: " + path);
    }
    BusSystem system;
    bool saw_buses = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream ss(line);
        std::string keyword;
        if (!(ss >> keyword)) {
            continue;
        }
        auto fail = [&](const std::string& what) {
            throw ValidationError("system file " + path + ":" + std::to_string(lineno) + ": " +
                                  what);
        };
        if (keyword == "buses") {
            if (!(ss >> system.n_buses)) fail("expected bus count");
            saw_buses = true;
        } else if (keyword == "reference") {
            if (!(ss >> system.reference_bus)) fail("expected reference bus index");
        } else if (keyword == "line") {
            Line l;
            if (!(ss >> l.from >> l.to >> l.susceptance)) fail("expected `line from to b`");
            system.lines.push_back(l);
        } else {
            fail("unknown directive `" + keyword + "`");
        }
        std::string rest;
        if (ss >> rest) {
            fail("trailing tokens");
        }
    }
    if (!saw_buses) {
        throw ValidationError("system file " + path + " missing `buses` directive");
    }
    system.validate();
    return system;
}

void BusSystem::to_file(const std::string& path) const {
    validate();
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write system file: " + path);
    }
    out << "buses " << n_buses << "\n";
    out << "reference " << reference_bus << "\n";
    for (const Line& line : lines) {
        out << "line " << line.from << " " << line.to << " " << format_double(line.susceptance)
            << "\n";
    }
}

BusSystem eight_bus_system() {
    // Radial feeder with two laterals; susceptances in per-unit.
    BusSystem s;
    s.n_buses = 8;
    s.reference_bus = 0;
    s.lines = {
        {0, 1, 12.0}, {1, 2, 9.5}, {2, 3, 8.0}, {1, 4, 7.0},
        {4, 5, 6.5},  {2, 6, 5.5}, {6, 7, 6.0},
    };
    s.validate();
    return s;
}

BusSystem fourteen_bus_system() {
    BusSystem s;
    s.n_buses = 14;
    s.reference_bus = 0;
    s.lines = {
        {0, 1, 16.9}, {0, 4, 4.48},  {1, 2, 5.05},  {1, 3, 5.67},  {1, 4, 5.75},
        {2, 3, 5.85}, {3, 4, 23.75}, {3, 6, 4.78},  {3, 8, 1.80},  {4, 5, 3.97},
        {5, 10, 5.03}, {5, 11, 3.91}, {5, 12, 7.68}, {6, 7, 5.68},  {6, 8, 9.09},
        {8, 9, 11.83}, {8, 13, 3.70}, {9, 10, 5.21}, {11, 12, 5.00}, {12, 13, 2.87},
    };
    s.validate();
    return s;
}

Eigen::VectorXd solve_dc_power_flow(const BusSystem& system, const Eigen::VectorXd& injections) {
    system.validate();
    if (injections.size() != system.n_buses) {
        throw ValidationError("injection vector length does not match bus count");
    }
    const double imbalance = injections.sum();
    if (std::abs(imbalance) > 1e-9) {
        throw ValidationError("injections must sum to zero (got imbalance " +
                              format_double(imbalance) + ")");
    }

    const int n = system.n_buses;
    const int ref = system.reference_bus;
    const Eigen::MatrixXd b = system.susceptance_matrix();

    // Reduced system: drop the reference row/column.
    Eigen::MatrixXd b_red(n - 1, n - 1);
    Eigen::VectorXd p_red(n - 1);
    std::vector<int> keep;
    keep.reserve(static_cast<std::size_t>(n - 1));
    for (int i = 0; i < n; ++i) {
        if (i != ref) keep.push_back(i);
    }
    for (int r = 0; r < n - 1; ++r) {
        p_red[r] = injections[keep[static_cast<std::size_t>(r)]];
        for (int c = 0; c < n - 1; ++c) {
            b_red(r, c) = b(keep[static_cast<std::size_t>(r)], keep[static_cast<std::size_t>(c)]);
        }
    }

    Eigen::LLT<Eigen::MatrixXd> llt(b_red);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("reduced susceptance matrix is singular (check topology)");
    }
    Eigen::VectorXd theta_red = llt.solve(p_red);

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
    for (int r = 0; r < n - 1; ++r) {
        theta[keep[static_cast<std::size_t>(r)]] = theta_red[r];
    }

    const double residual = (b * theta - injections).lpNorm<Eigen::Infinity>();
    if (residual > 1e-8) {
        throw NumericalError("power flow residual " + format_double(residual) + " exceeds 1e-8");
    }
    return theta;
}

void LoadProfileSpec::validate() const {
    if (!(base_load > 0.0)) {
        throw ValidationError("base_load must be positive");
    }
    if (diurnal_amplitude < 0.0 || seasonal_amplitude < 0.0 ||
        diurnal_amplitude + seasonal_amplitude >= 0.95) {
        throw ValidationError("profile amplitudes must be nonnegative and sum below 0.95");
    }
    if (!(weekend_factor > 0.0)) {
        throw ValidationError("weekend_factor must be positive");
    }
    if (noise_sigma < 0.0 || bus_spread < 0.0) {
        throw ValidationError("noise_sigma and bus_spread must be nonnegative");
    }
}

void PvProfileSpec::validate() const {
    if (capacity_fraction < 0.0) {
        throw ValidationError("capacity_fraction must be nonnegative");
    }
    if (!(sunrise_hour < sunset_hour) || sunrise_hour < 0.0 || sunset_hour > 24.0) {
        throw ValidationError("daylight window must satisfy 0 <= sunrise < sunset <= 24");
    }
    if (cloud_persistence < 0.0 || cloud_persistence >= 1.0 || cloud_noise < 0.0) {
        throw ValidationError("cloud AR(1) needs persistence in [0,1) and nonnegative noise");
    }
}

Eigen::VectorXd HourlyDataset::injections_at(Eigen::Index hour) const {
    Eigen::VectorXd inj = -loads.row(hour).transpose();
    double supplied = 0.0;
    for (Eigen::Index b = 0; b < n_buses(); ++b) {
        if (b != reference_bus) supplied += loads(hour, b);
    }
    inj[reference_bus] = supplied;
    return inj;
}

void HourlyDataset::validate() const {
    if (loads.rows() != angles.rows() || loads.cols() != angles.cols()) {
        throw ValidationError("loads and angles must have identical shapes");
    }
    if (loads.rows() == 0 || loads.cols() == 0) {
        throw ValidationError("dataset is empty");
    }
    if (reference_bus < 0 || reference_bus >= loads.cols()) {
        throw ValidationError("dataset reference bus out of range");
    }
    if (!loads.allFinite() || !angles.allFinite()) {
        throw ValidationError("dataset contains non-finite entries");
    }
    for (Eigen::Index h = 0; h < angles.rows(); ++h) {
        if (angles(h, reference_bus) != 0.0) {
            throw ValidationError("reference bus angle must be exactly zero at every hour");
        }
    }
}

void HourlyDataset::to_csv(const std::string& path) const {
    validate();
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write dataset file: " + path);
    }
    out << "hour,bus,load,theta\n";
    for (Eigen::Index h = 0; h < n_hours(); ++h) {
        for (Eigen::Index b = 0; b < n_buses(); ++b) {
            out << h << "," << b << "," << format_double(loads(h, b)) << ","
                << format_double(angles(h, b)) << "\n";
        }
    }
}

HourlyDataset HourlyDataset::from_csv(const std::string& path, int reference_bus) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open dataset file: " + path);
    }
    std::string header;
    if (!std::getline(in, header) || header != "hour,bus,load,theta") {
        throw ValidationError("dataset file " + path + " has unexpected header");
    }
    struct Row {
        long hour;
        int bus;
        double load;
        double theta;
    };
    std::vector<Row> rows;
    long max_hour = -1;
    int max_bus = -1;
    std::string line;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Row r;
        char c1, c2, c3;
        std::istringstream ss(line);
        if (!(ss >> r.hour >> c1 >> r.bus >> c2 >> r.load >> c3 >> r.theta) || c1 != ',' ||
            c2 != ',' || c3 != ',') {
            throw ValidationError("dataset file " + path + ":" + std::to_string(lineno) +
                                  ": malformed row");
        }
        max_hour = std::max(max_hour, r.hour);
        max_bus = std::max(max_bus, r.bus);
        rows.push_back(r);
    }
    if (rows.empty()) {
        throw ValidationError("dataset file " + path + " has no data rows");
    }
    HourlyDataset ds;
    ds.reference_bus = reference_bus;
    ds.loads = Eigen::MatrixXd::Constant(max_hour + 1, max_bus + 1,
                                         std::numeric_limits<double>::quiet_NaN());
    ds.angles = ds.loads;
    for (const Row& r : rows) {
        ds.loads(r.hour, r.bus) = r.load;
        ds.angles(r.hour, r.bus) = r.theta;
    }
    if (!ds.loads.allFinite() || !ds.angles.allFinite()) {
        throw ValidationError("dataset file " + path + " has missing (hour, bus) entries");
    }
    ds.validate();
    return ds;
}

HourlyDataset generate_year(const BusSystem& system, const LoadProfileSpec& load_spec,
                            const PvProfileSpec& pv_spec, std::uint64_t seed, int horizon_days) {
    system.validate();
    load_spec.validate();
    pv_spec.validate();
    if (horizon_days < 120) {
        throw ValidationError(
            "horizon must cover at least 120 days (n_t1 = 60 training days plus input history "
            "and evaluation days); got " +
            std::to_string(horizon_days));
    }

    const int n = system.n_buses;
    const long hours = 24L * horizon_days;

    // Per-bus parameters from a dedicated stream so the hourly stream is
    // unaffected by bus count tweaks elsewhere.
    std::mt19937_64 bus_rng = seeded_rng(seed, 1);
    std::lognormal_distribution<double> base_factor(0.0, load_spec.bus_spread);
    std::uniform_real_distribution<double> phase_jitter(-1.5, 1.5);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::VectorXd base(n);
    Eigen::VectorXd peak_hour(n);
    Eigen::VectorXd pv_capacity(n);
    for (int b = 0; b < n; ++b) {
        base[b] = load_spec.base_load * base_factor(bus_rng);
        peak_hour[b] = load_spec.diurnal_peak_hour + phase_jitter(bus_rng);
        pv_capacity[b] = pv_spec.capacity_fraction * base[b] * (0.5 + unit(bus_rng));
    }

    std::mt19937_64 hour_rng = seeded_rng(seed, 2);
    std::normal_distribution<double> gauss(0.0, 1.0);

    HourlyDataset ds;
    ds.reference_bus = system.reference_bus;
    ds.pv_adjusted = true;
    ds.loads.resize(hours, n);
    ds.angles.resize(hours, n);

    Eigen::VectorXd cloud = Eigen::VectorXd::Constant(n, 0.5);
    const double noise_mean = -0.5 * load_spec.noise_sigma * load_spec.noise_sigma;

    for (long h = 0; h < hours; ++h) {
        const long day = h / 24;
        const double hod = static_cast<double>(h % 24);
        const double doy = static_cast<double>(day % 365);
        const bool weekend = (day % 7) >= 5;
        const double seasonal =
            1.0 + load_spec.seasonal_amplitude *
                      std::cos(kTwoPi * (doy - load_spec.seasonal_peak_day) / 365.0);
        const double weekly = weekend ? load_spec.weekend_factor : 1.0;

        // Daylight window stretches with the season (longest near midsummer).
        const double swing =
            pv_spec.seasonal_daylight_swing * std::cos(kTwoPi * (doy - 172.0) / 365.0);
        const double sunrise = pv_spec.sunrise_hour - swing;
        const double sunset = pv_spec.sunset_hour + swing;

        for (int b = 0; b < n; ++b) {
            const double diurnal =
                1.0 + load_spec.diurnal_amplitude * std::cos(kTwoPi * (hod - peak_hour[b]) / 24.0);
            const double noise =
                std::exp(noise_mean + load_spec.noise_sigma * gauss(hour_rng));
            const double gross = base[b] * diurnal * weekly * seasonal * noise;

            // AR(1) cloudiness advanced every hour, clipped to [0, 1].
            cloud[b] = pv_spec.cloud_persistence * cloud[b] +
                       (1.0 - pv_spec.cloud_persistence) * 0.5 +
                       pv_spec.cloud_noise * 0.1 * gauss(hour_rng);
            cloud[b] = std::clamp(cloud[b], 0.0, 1.0);

            double pv = 0.0;
            if (hod > sunrise && hod < sunset) {
                const double arg = (hod - sunrise) / (sunset - sunrise);
                pv = pv_capacity[b] * std::sin(std::numbers::pi * arg) * (1.0 - cloud[b]);
            }
            // Net load may go negative under heavy PV; allowed by design.
            ds.loads(h, b) = gross - pv;
        }

        ds.angles.row(h) = solve_dc_power_flow(system, ds.injections_at(h)).transpose();
    }
    ds.validate();
    return ds;
}

}  // namespace loadcast
