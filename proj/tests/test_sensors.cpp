// SPDX-License-Identifier: Apache-2.0
//
// beamcraft: mmWave beam selection from multimodal vehicular sensing
// Copyright (C) 2026 The beamcraft authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include "beamcraft/random.hpp"
#include "beamcraft/scenegen.hpp"
#include "beamcraft/sensors.hpp"

#include <doctest.h>

#include <map>
#include <sstream>

using namespace beamcraft;

namespace {

Vehicle make(Eigen::Vector3d center, VehicleKind kind, int lane)
{
    Vehicle v;
    v.kind = kind;
    v.size = vehicle_size(kind);
    v.center = center;
    v.lane = lane;
    return v;
}

Scene receiver_only()
{
    Scene s;
    s.bs_position = {2.0, 45.0, 4.0};
    s.vehicles.push_back(make({9.5, 30.25, 0.75}, VehicleKind::car, 1));
    s.receiver_position = {9.5, 30.25, 1.5};
    return s;
}

std::size_t count_value(const LidarGrid &g, LidarCell v)
{
    return static_cast<std::size_t>(std::count(g.cells.begin(), g.cells.end(), static_cast<std::uint8_t>(v)));
}

// Independent occupancy oracle: every cell against every box.
std::vector<std::uint8_t> lidar_oracle(const Scene &s, const LidarGridSpec &spec)
{
    const auto [d0, d1, d2] = spec.dims;
    std::vector<std::uint8_t> out(d0 * d1 * d2, 0);
    auto cell_box = [&](std::size_t i, std::size_t j, std::size_t k, Eigen::Vector3d &lo, Eigen::Vector3d &hi) {
        lo = spec.origin + spec.cell_size_m * Eigen::Vector3d(double(i), double(j), double(k));
        hi = lo + Eigen::Vector3d::Constant(spec.cell_size_m);
    };
    for (std::size_t i = 0; i < d0; ++i)
        for (std::size_t j = 0; j < d1; ++j)
            for (std::size_t k = 0; k < d2; ++k) {
                Eigen::Vector3d lo, hi;
                cell_box(i, j, k, lo, hi);
                const std::size_t idx = (i * d1 + j) * d2 + k;
                for (const auto &v : s.vehicles) {
                    const Eigen::Vector3d bl = v.box().min(), bh = v.box().max();
                    if ((bl.array() < hi.array()).all() && (bh.array() > lo.array()).all())
                        out[idx] = 1;
                }
                const Eigen::Vector3d &b = s.bs_position, &r = s.receiver_position;
                if ((b.array() >= lo.array()).all() && (b.array() < hi.array()).all())
                    out[idx] = 2;
                if ((r.array() >= lo.array()).all() && (r.array() < hi.array()).all())
                    out[idx] = 3;
            }
    return out;
}

std::size_t count_pixels(const TopViewImage &img, float v)
{
    return static_cast<std::size_t>((img.pixels.array() == v).count());
}

} // namespace

TEST_CASE("render_gps")
{
    const Scene s = receiver_only();
    const auto exact = render_gps(s, 0.0, 99);
    CHECK(exact.latitude_like == 9.5);
    CHECK(exact.longitude_like == 30.25);
    CHECK(exact.noise_sigma_m == 0.0);

    const auto a = render_gps(s, 1.0, 5), b = render_gps(s, 1.0, 5);
    CHECK(a.latitude_like == b.latitude_like);
    CHECK(a.longitude_like == b.longitude_like);
    CHECK(a.noise_sigma_m == 1.0);
    CHECK_THROWS_AS(render_gps(s, -1.0, 0), std::invalid_argument);

    double sx = 0, sxx = 0, sy = 0, syy = 0;
    const int n = 10000;
    for (int seed = 0; seed < n; ++seed) {
        const auto g = render_gps(s, 2.0, static_cast<std::uint64_t>(seed));
        const double dx = g.latitude_like - 9.5, dy = g.longitude_like - 30.25;
        sx += dx;
        sxx += dx * dx;
        sy += dy;
        syy += dy * dy;
    }
    const double vx = (sxx - sx * sx / n) / (n - 1), vy = (syy - sy * sy / n) / (n - 1);
    CHECK(std::abs(std::sqrt(vx) - 2.0) < 0.1);
    CHECK(std::abs(std::sqrt(vy) - 2.0) < 0.1);
}

TEST_CASE("render_lidar examples")
{
    const Scene s = receiver_only();
    LidarGridSpec spec;
    const auto g = render_lidar(s, spec);
    CHECK(g.dims == spec.dims);
    CHECK(count_value(g, LidarCell::tx_marker) == 1);
    CHECK(count_value(g, LidarCell::rx_marker) == 1);
    // Car footprint x [8.6, 10.4], y [28, 32.5], z [0, 1.5] against 1 m cells from (0, -55, 0).
    std::size_t expected_occupied = 0;
    for (std::size_t i = 8; i <= 10; ++i)
        for (std::size_t j = 83; j <= 87; ++j)
            for (std::size_t k = 0; k <= 1; ++k) {
                const auto c = g.at(i, j, k);
                CHECK((c == 1 || c == 3));
                expected_occupied += c == 1 ? 1 : 0;
            }
    CHECK(g.at(9, 85, 1) == 3);
    CHECK(g.at(2, 100, 4) == 2);
    CHECK(count_value(g, LidarCell::occupied) == expected_occupied);
    CHECK(expected_occupied == 3 * 5 * 2 - 1);

    Scene markers = s;
    markers.vehicles.front().size = Eigen::Vector3d::Constant(1e-9);
    LidarGrid bare = render_lidar(markers, spec);
    std::size_t nonzero = 0;
    for (auto c : bare.cells)
        nonzero += c != 0 ? 1 : 0;
    CHECK(nonzero <= 3);

    Scene out = s;
    out.bs_position = {-1.0, 45.0, 4.0};
    CHECK_THROWS_AS(render_lidar(out, spec), OutOfBoundsError);
    out = s;
    out.receiver_position = {9.5, 500.0, 1.5};
    CHECK_THROWS_AS(render_lidar(out, spec), OutOfBoundsError);
}

TEST_CASE("property: lidar matches a per-cell oracle")
{
    Rng rng(41);
    for (int trial = 0; trial < 60; ++trial) {
        LidarGridSpec spec;
        spec.dims = {static_cast<std::size_t>(uniform_int(rng, 2, 16)), static_cast<std::size_t>(uniform_int(rng, 2, 16)),
                     static_cast<std::size_t>(uniform_int(rng, 2, 16))};
        spec.cell_size_m = uniform(rng, 0.3, 2.0);
        spec.origin = {uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -1, 1)};
        const Eigen::Vector3d extent =
            spec.cell_size_m * Eigen::Vector3d(double(spec.dims[0]), double(spec.dims[1]), double(spec.dims[2]));
        auto inside = [&] {
            return Eigen::Vector3d(spec.origin + extent.cwiseProduct(Eigen::Vector3d(
                                                     uniform(rng, 0.01, 0.99), uniform(rng, 0.01, 0.99),
                                                     uniform(rng, 0.01, 0.99))));
        };
        Scene s;
        const auto nv = uniform_int(rng, 1, 5);
        for (std::int64_t v = 0; v < nv; ++v) {
            Vehicle veh;
            veh.center = inside();
            veh.size = extent.cwiseProduct(Eigen::Vector3d(uniform(rng, 0.02, 0.6), uniform(rng, 0.02, 0.6),
                                                           uniform(rng, 0.02, 0.6)));
            s.vehicles.push_back(veh);
        }
        s.receiver_position = s.vehicles[0].center;
        s.bs_position = inside();
        LidarGrid g;
        try {
            g = render_lidar(s, spec);
        } catch (const std::invalid_argument &) {
            continue; // BS and receiver share a cell
        }
        CHECK(g.cells == lidar_oracle(s, spec));
        CHECK(count_value(g, LidarCell::tx_marker) == 1);
        CHECK(count_value(g, LidarCell::rx_marker) == 1);
    }
}

TEST_CASE("property: lidar translation equivariance")
{
    Rng rng(43);
    SceneGenConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        cfg.seed = rng();
        Scene s = generate_scene(cfg, trial);
        LidarGridSpec spec;
        spec.origin = {-0.5, -55.0, 0.0};
        const auto base = render_lidar(s, spec);
        for (int axis = 0; axis < 2; ++axis) {
            Scene t = s;
            const Eigen::Vector3d shift = Eigen::Vector3d::Unit(axis) * spec.cell_size_m;
            t.bs_position += shift;
            t.receiver_position += shift;
            for (auto &v : t.vehicles)
                v.center += shift;
            const auto moved = render_lidar(t, spec);
            for (std::size_t i = 0; i + 1 < spec.dims[0]; ++i)
                for (std::size_t j = 0; j + 1 < spec.dims[1]; ++j)
                    for (std::size_t k = 0; k < spec.dims[2]; ++k) {
                        const std::size_t ni = axis == 0 ? i + 1 : i, nj = axis == 1 ? j + 1 : j;
                        REQUIRE(moved.at(ni, nj, k) == base.at(i, j, k));
                    }
        }
    }
}

TEST_CASE("render_topview examples")
{
    const Scene s = receiver_only();
    TopViewSpec spec;
    const auto img = render_topview(s, spec);
    CHECK(img.pixels.rows() == 48);
    CHECK(img.pixels.cols() == 96);
    // Footprint x [8.6, 10.4], y [28, 32.5]; pixel centers at origin + p + 0.5.
    std::size_t rows = 0, cols = 0;
    for (int r = 0; r < 48; ++r)
        rows += (-4.0 + r + 0.5 >= 8.6 && -4.0 + r + 0.5 <= 10.4) ? 1 : 0;
    for (int c = 0; c < 96; ++c)
        cols += (-3.0 + c + 0.5 >= 28.0 && -3.0 + c + 0.5 <= 32.5) ? 1 : 0;
    CHECK(count_pixels(img, kReceiverGray) == rows * cols);
    CHECK(count_pixels(img, kBsGray) == 1);
    CHECK(count_pixels(img, 0.0f) == static_cast<std::size_t>(img.pixels.size()) - rows * cols - 1);
    CHECK(img.pixels(6, 48) == kBsGray);
    CHECK(img.pixels.minCoeff() >= 0.0f);
    CHECK(img.pixels.maxCoeff() <= 1.0f);

    Scene away = s;
    away.vehicles.push_back(make({6.0, 70.25, 1.75}, VehicleKind::truck, 0));
    const auto img2 = render_topview(away, spec);
    CHECK(count_pixels(img2, kVehicleGray) > 0);
    CHECK(img2.pixels.block(0, 0, 48, 20).isZero());

    Scene off = s;
    off.receiver_position = {9.5, 200.0, 1.5};
    CHECK_THROWS_AS(render_topview(off, spec), OutOfBoundsError);
}

TEST_CASE("property: doubling the pixel size halves the footprint per axis")
{
    Rng rng(47);
    for (int trial = 0; trial < 40; ++trial) {
        Scene s;
        s.bs_position = {2.0, 45.0, 4.0};
        Vehicle v = make({uniform(rng, 5, 12), uniform(rng, 20, 70), 1.0}, VehicleKind::truck, 0);
        v.size.y() = uniform(rng, 4.0, 12.0);
        s.vehicles.push_back(v);
        s.receiver_position = v.center;
        TopViewSpec fine;
        fine.meters_per_pixel = 0.5;
        fine.dims = {96, 192};
        TopViewSpec coarse;
        const auto a = render_topview(s, fine), b = render_topview(s, coarse);
        auto extent = [](const TopViewImage &img, int axis) {
            Eigen::Index n = 0;
            for (Eigen::Index i = 0; i < (axis == 0 ? img.pixels.rows() : img.pixels.cols()); ++i) {
                const bool any = axis == 0 ? (img.pixels.row(i).array() == kReceiverGray).any()
                                           : (img.pixels.col(i).array() == kReceiverGray).any();
                n += any ? 1 : 0;
            }
            return static_cast<double>(n);
        };
        for (int axis = 0; axis < 2; ++axis)
            CHECK(std::abs(extent(a, axis) / 2.0 - extent(b, axis)) <= 1.0);
    }
}

TEST_CASE("gps context vector")
{
    Scene s = receiver_only();
    s.vehicles.front().lane = 0;
    const auto one = gps_context_vector(s, 3);
    REQUIRE(one.values.size() == GpsContextVector::length_for(3));
    CHECK(one.values.size() == 26);
    CHECK(one.values[0] == 2.0);
    CHECK(one.values[1] == 45.0);
    const std::size_t c1 = 2 + 2 * 3 * 2;
    CHECK(one.values[c1] == 9.5);
    CHECK(one.values[c1 + 1] == 30.25);
    for (std::size_t i = 2; i < one.values.size(); ++i)
        if (i != c1 && i != c1 + 1)
            CHECK(one.values[i] == 0.0);

    Scene crowd;
    crowd.bs_position = {2.0, 45.0, 4.0};
    crowd.vehicles = {make({6.0, 10.0, 0.75}, VehicleKind::car, 0), make({6.0, 40.0, 0.75}, VehicleKind::car, 0),
                      make({6.0, 80.0, 0.75}, VehicleKind::car, 0), make({9.5, 50.0, 1.6}, VehicleKind::bus, 1)};
    crowd.receiver_vehicle_index = 1;
    crowd.receiver_position = {6.0, 40.0, 1.5};
    const auto cv = gps_context_vector(crowd, 2);
    const std::size_t t2 = 2 + 1 * 4, c = 2 + 2 * 4;
    CHECK(cv.values[t2] == 9.5);
    CHECK(cv.values[t2 + 1] == 50.0);
    // y = 80 is 40 m from the receiver, y = 10 is 30 m: the former is dropped.
    CHECK(cv.values[c + 1] == 10.0);
    CHECK(cv.values[c + 3] == 40.0);

    Scene empty_lanes = crowd;
    empty_lanes.vehicles = {make({20.0, 40.0, 0.75}, VehicleKind::car, 5)};
    empty_lanes.receiver_vehicle_index = 0;
    const auto ev = gps_context_vector(empty_lanes, 2);
    for (std::size_t i = 2; i < ev.values.size(); ++i)
        CHECK(ev.values[i] == 0.0);
    CHECK_THROWS_AS(gps_context_vector(crowd, 0), std::invalid_argument);

    SceneGenConfig cfg;
    for (std::int64_t id = 0; id < 20; ++id)
        CHECK(gps_context_vector(generate_scene(cfg, id), 4).values.size() == GpsContextVector::length_for(4));
}

TEST_CASE("lidar serialization")
{
    SceneGenConfig cfg;
    const auto g = render_lidar(generate_scene(cfg, 3), LidarGridSpec{});
    std::stringstream ss;
    write_lidar(ss, g);
    const std::string bytes = ss.str();
    const auto nl = bytes.find('\n');
    REQUIRE(nl != std::string::npos);
    const auto header = nlohmann::json::parse(bytes.substr(0, nl));
    CHECK(header.contains("dims"));
    CHECK(header.contains("cell_size_m"));
    CHECK(header.contains("origin"));
    CHECK(bytes.size() - nl - 1 == g.cells.size());
    const auto back = read_lidar(ss);
    CHECK(back.cells == g.cells);
    CHECK(back.dims == g.dims);
    CHECK(back.origin == g.origin);
    std::stringstream again;
    write_lidar(again, back);
    CHECK(again.str() == bytes);

    std::string truncated = bytes.substr(0, bytes.size() - 10);
    std::stringstream ts(truncated);
    CHECK_THROWS_AS(read_lidar(ts), FormatError);
}

TEST_CASE("pgm serialization")
{
    SceneGenConfig cfg;
    const auto img = render_topview(generate_scene(cfg, 5), TopViewSpec{});
    std::stringstream ss;
    write_pgm(ss, img);
    const std::string first = ss.str();
    CHECK(first.rfind("P5\n96 48\n255\n", 0) == 0);
    const auto back = read_pgm(ss, img.meters_per_pixel, img.origin);
    CHECK(back.pixels.rows() == 48);
    CHECK((back.pixels - img.pixels).cwiseAbs().maxCoeff() <= 1.0f / 510.0f + 1e-7f);
    std::stringstream again;
    write_pgm(again, back);
    CHECK(again.str() == first);
    // The semantic gray levels survive quantization exactly enough to be told apart.
    CHECK(count_pixels(back, 1.0f) == count_pixels(img, kReceiverGray));

    std::stringstream bad("P2\n1 1\n255\n0");
    CHECK_THROWS_AS(read_pgm(bad), FormatError);
}
