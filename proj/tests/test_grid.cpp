#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "loadcast/errors.hpp"
#include "loadcast/grid.hpp"

using namespace loadcast;

namespace {

BusSystem two_bus() {
    BusSystem s;
    s.n_buses = 2;
    s.reference_bus = 0;
    s.lines = {{0, 1, 10.0}};
    return s;
}

BusSystem three_bus_ring() {
    BusSystem s;
    s.n_buses = 3;
    s.reference_bus = 0;
    s.lines = {{0, 1, 5.0}, {1, 2, 5.0}, {2, 0, 5.0}};
    return s;
}

}  // namespace

TEST_CASE("two-bus system solves by hand") {
    Eigen::VectorXd inj(2);
    inj << -1.0, 1.0;
    Eigen::VectorXd theta = solve_dc_power_flow(two_bus(), inj);
    CHECK(theta[0] == 0.0);
    CHECK(theta[1] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("zero injections give zero angles") {
    Eigen::VectorXd theta = solve_dc_power_flow(three_bus_ring(), Eigen::VectorXd::Zero(3));
    CHECK(theta.isZero(0.0));
}

TEST_CASE("symmetric ring splits evenly") {
    Eigen::VectorXd inj(3);
    inj << -2.0, 1.0, 1.0;
    Eigen::VectorXd theta = solve_dc_power_flow(three_bus_ring(), inj);
    CHECK(theta[1] == doctest::Approx(theta[2]).epsilon(1e-12));
}

TEST_CASE("unbalanced injections are rejected") {
    Eigen::VectorXd inj(2);
    inj << -1.0, 1.5;
    CHECK_THROWS_AS(solve_dc_power_flow(two_bus(), inj), ValidationError);
}

TEST_CASE("system validation catches bad topologies") {
    BusSystem disconnected;
    disconnected.n_buses = 4;
    disconnected.reference_bus = 0;
    disconnected.lines = {{0, 1, 1.0}, {2, 3, 1.0}};
    CHECK_THROWS_AS(disconnected.validate(), ValidationError);

    BusSystem self_loop = two_bus();
    self_loop.lines.push_back({1, 1, 2.0});
    CHECK_THROWS_AS(self_loop.validate(), ValidationError);

    BusSystem negative = two_bus();
    negative.lines[0].susceptance = -1.0;
    CHECK_THROWS_AS(negative.validate(), ValidationError);

    BusSystem bad_ref = two_bus();
    bad_ref.reference_bus = 5;
    CHECK_THROWS_AS(bad_ref.validate(), ValidationError);
}

TEST_CASE("generation is deterministic and shaped") {
    BusSystem sys = eight_bus_system();
    LoadProfileSpec load;
    PvProfileSpec pv;
    HourlyDataset a = generate_year(sys, load, pv, 42, 365);
    HourlyDataset b = generate_year(sys, load, pv, 42, 365);
    CHECK(a.loads.rows() == 8760);
    CHECK(a.loads.cols() == 8);
    CHECK(a.angles.rows() == 8760);
    CHECK((a.loads - b.loads).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.angles - b.angles).cwiseAbs().maxCoeff() == 0.0);

    HourlyDataset c = generate_year(sys, load, pv, 43, 365);
    CHECK((a.loads - c.loads).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("zero pv capacity equals pv-free generation") {
    BusSystem sys = eight_bus_system();
    LoadProfileSpec load;
    PvProfileSpec zero_pv;
    zero_pv.capacity_fraction = 0.0;
    PvProfileSpec off = zero_pv;
    HourlyDataset a = generate_year(sys, load, zero_pv, 7, 130);
    HourlyDataset b = generate_year(sys, load, off, 7, 130);
    CHECK((a.loads - b.loads).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("horizon below 120 days is rejected") {
    CHECK_THROWS_WITH_AS(
        generate_year(eight_bus_system(), LoadProfileSpec{}, PvProfileSpec{}, 1, 10),
        doctest::Contains("120"), ValidationError);
}

TEST_CASE("every generated hour satisfies the power-flow contract") {
    BusSystem sys = eight_bus_system();
    HourlyDataset ds = generate_year(sys, LoadProfileSpec{}, PvProfileSpec{}, 5, 130);
    Eigen::MatrixXd b = sys.susceptance_matrix();
    double max_residual = 0.0;
    for (Eigen::Index h = 0; h < ds.n_hours(); h += 17) {
        Eigen::VectorXd inj = ds.injections_at(h);
        max_residual = std::max(
            max_residual,
            (b * ds.angles.row(h).transpose() - inj).lpNorm<Eigen::Infinity>());
    }
    CHECK(max_residual <= 1e-8);
}

TEST_CASE("angle differences are exactly antisymmetric") {
    HourlyDataset ds =
        generate_year(eight_bus_system(), LoadProfileSpec{}, PvProfileSpec{}, 5, 130);
    for (Eigen::Index h = 0; h < 48; ++h) {
        for (int i = 0; i < 8; ++i) {
            for (int k = 0; k < 8; ++k) {
                CHECK(ds.theta_diff(h, i, k) == -ds.theta_diff(h, k, i));
            }
        }
    }
}

TEST_CASE("dataset csv round-trips") {
    HourlyDataset ds =
        generate_year(eight_bus_system(), LoadProfileSpec{}, PvProfileSpec{}, 3, 120);
    const std::string path = "test_grid_roundtrip.csv";
    ds.to_csv(path);
    HourlyDataset back = HourlyDataset::from_csv(path, ds.reference_bus);
    CHECK((ds.loads - back.loads).cwiseAbs().maxCoeff() == 0.0);
    CHECK((ds.angles - back.angles).cwiseAbs().maxCoeff() == 0.0);
    std::remove(path.c_str());
}

TEST_CASE("system file round-trips and rejects junk") {
    BusSystem sys = fourteen_bus_system();
    const std::string path = "test_grid_system.txt";
    sys.to_file(path);
    BusSystem back = BusSystem::from_file(path);
    CHECK(back.n_buses == sys.n_buses);
    CHECK(back.lines.size() == sys.lines.size());
    CHECK(back.reference_bus == sys.reference_bus);
    std::remove(path.c_str());

    const std::string bad = "test_grid_bad.txt";
    {
        std::ofstream out(bad);
        out << "buses 3\nreference 0\nwidget 1 2\n";
    }
    CHECK_THROWS_AS(BusSystem::from_file(bad), ValidationError);
    std::remove(bad.c_str());

    CHECK_THROWS_AS(BusSystem::from_file("does_not_exist.system"), IoError);
}

TEST_CASE("dataset validation enforces the reference angle") {
    HourlyDataset ds;
    ds.loads = Eigen::MatrixXd::Ones(4, 2);
    ds.angles = Eigen::MatrixXd::Zero(4, 2);
    ds.reference_bus = 0;
    CHECK_NOTHROW(ds.validate());
    ds.angles(2, 0) = 1e-9;
    CHECK_THROWS_AS(ds.validate(), ValidationError);
}
