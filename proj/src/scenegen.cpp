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

#include "beamcraft/scenegen.hpp"

#include "beamcraft/random.hpp"

#include <algorithm>
#include <limits>

namespace beamcraft {

namespace {

constexpr int kPlacementRetries = 64;
constexpr double kAlongRoadGapM = 1.0;

// Pick a kind with 60/25/15 car/truck/bus odds.
VehicleKind draw_kind(Rng &rng)
{
    const double u = uniform01(rng);
    if (u < 0.60)
        return VehicleKind::car;
    if (u < 0.85)
        return VehicleKind::truck;
    return VehicleKind::bus;
}

Vehicle make_vehicle(const SceneGenConfig &cfg, VehicleKind kind, int lane, double y)
{
    Vehicle v;
    v.kind = kind;
    v.lane = lane;
    v.size = vehicle_size(kind);
    v.center = Eigen::Vector3d(cfg.lane_x(lane), y, 0.5 * v.size.z());
    return v;
}

bool fits(const Vehicle &candidate, const std::vector<Vehicle> &placed)
{
    Box padded = candidate.box();
    padded.size.y() += 2.0 * kAlongRoadGapM;
    return std::none_of(placed.begin(), placed.end(),
                        [&](const Vehicle &v) { return boxes_overlap(padded, v.box()); });
}

bool on_road(const SceneGenConfig &cfg, const Vehicle &v)
{
    const double half = 0.5 * v.size.y();
    return v.center.y() - half >= 0.0 && v.center.y() + half <= cfg.road_length_m;
}

double draw_y(const SceneGenConfig &cfg, VehicleKind kind, Rng &rng)
{
    const double half = 0.5 * vehicle_size(kind).y();
    return uniform(rng, half, cfg.road_length_m - half);
}

bool obstructed(const Scene &scene, const Eigen::Vector3d &a, const Eigen::Vector3d &b)
{
    for (std::size_t i = 0; i < scene.vehicles.size(); ++i) {
        if (i == scene.receiver_vehicle_index)
            continue;
        if (segment_intersects_box(a, b, scene.vehicles[i].box()))
            return true;
    }
    return false;
}

std::complex<double> path_gain(double length, double scale, double wavelength)
{
    const double magnitude = scale * wavelength / (4.0 * std::numbers::pi * length);
    const double phase = -2.0 * std::numbers::pi * std::fmod(length / wavelength, 1.0);
    return std::polar(magnitude, phase);
}

// Azimuth of direction d at the BS array (broadside +x) and at the receiver array (broadside -x).
double bs_azimuth(const Eigen::Vector3d &d) { return std::atan2(d.y(), d.x()); }
double rx_azimuth(const Eigen::Vector3d &d) { return std::atan2(d.y(), -d.x()); }

nlohmann::json vec_json(const Eigen::Vector3d &v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d json_vec(const nlohmann::json &j)
{
    if (!j.is_array() || j.size() != 3)
        throw FormatError("scene JSON: expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

} // namespace

std::string to_string(VehicleKind kind)
{
    switch (kind) {
    case VehicleKind::car: return "car";
    case VehicleKind::truck: return "truck";
    case VehicleKind::bus: return "bus";
    }
    return "car";
}

VehicleKind vehicle_kind_from_string(const std::string &name)
{
    if (name == "car")
        return VehicleKind::car;
    if (name == "truck")
        return VehicleKind::truck;
    if (name == "bus")
        return VehicleKind::bus;
    throw FormatError("unknown vehicle kind '" + name + "'");
}

Eigen::Vector3d vehicle_size(VehicleKind kind)
{
    switch (kind) {
    case VehicleKind::car: return {1.8, 4.5, 1.5};
    case VehicleKind::truck: return {2.5, 10.0, 3.5};
    case VehicleKind::bus: return {2.5, 12.0, 3.2};
    }
    return {1.8, 4.5, 1.5};
}

bool boxes_overlap(const Box &a, const Box &b)
{
    const Eigen::Vector3d amin = a.min(), amax = a.max(), bmin = b.min(), bmax = b.max();
    for (int i = 0; i < 3; ++i)
        if (amax[i] <= bmin[i] || bmax[i] <= amin[i])
            return false;
    return true;
}

bool segment_intersects_box(const Eigen::Vector3d &a, const Eigen::Vector3d &b, const Box &box)
{
    const Eigen::Vector3d lo = box.min(), hi = box.max();
    const Eigen::Vector3d d = b - a;
    double t0 = 0.0, t1 = 1.0;
    for (int i = 0; i < 3; ++i) {
        if (d[i] == 0.0) {
            if (a[i] < lo[i] || a[i] > hi[i])
                return false;
            continue;
        }
        double ta = (lo[i] - a[i]) / d[i];
        double tb = (hi[i] - a[i]) / d[i];
        if (ta > tb)
            std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1)
            return false;
    }
    return true;
}

void SceneGenConfig::validate() const
{
    if (lanes < 1)
        throw std::invalid_argument("scene config: lanes must be >= 1");
    if (!(lane_spacing_m > 0.0) || !(road_length_m > 0.0))
        throw std::invalid_argument("scene config: lane spacing and road length must be positive");
    if (min_vehicles < 1 || max_vehicles < min_vehicles)
        throw std::invalid_argument("scene config: vehicle count range must be nonempty and >= 1");
    if (max_speed_mph < min_speed_mph)
        throw std::invalid_argument("scene config: speed range must be nonempty");
    if (!(blockage_probability >= 0.0 && blockage_probability <= 1.0))
        throw std::invalid_argument("scene config: blockage_probability must lie in [0, 1]");
    if (reflectors < 0 || reflectors > 2)
        throw std::invalid_argument("scene config: reflectors must be 0, 1 or 2");
    if (!(reflectivity >= 0.0 && reflectivity <= 1.0))
        throw std::invalid_argument("scene config: reflectivity must lie in [0, 1]");
    if (!(bs_height_m > 0.0))
        throw std::invalid_argument("scene config: bs_height_m must be positive");
    if (!(bs_x_m < first_lane_x_m - 0.5 * lane_spacing_m))
        throw std::invalid_argument("scene config: BS must stand beside the road (bs_x_m < first lane edge)");
}

void Scene::validate() const
{
    if (receiver_vehicle_index >= vehicles.size())
        throw std::invalid_argument("scene: receiver_vehicle_index out of range");
    for (const auto &v : vehicles)
        if (!(v.size.array() > 0.0).all())
            throw std::invalid_argument("scene: vehicle sizes must be positive");
    const Box rb = receiver().box();
    const Eigen::Vector3d lo = rb.min().array() - 1e-9, hi = rb.max().array() + 1e-9;
    if ((receiver_position.array() < lo.array()).any() || (receiver_position.array() > hi.array()).any())
        throw std::invalid_argument("scene: receiver_position must lie on the receiver vehicle");
    for (const auto &p : reflector_planes) {
        if (!(p.reflectivity >= 0.0 && p.reflectivity <= 1.0))
            throw std::invalid_argument("scene: reflectivity must lie in [0, 1]");
        if (std::abs(p.normal.norm() - 1.0) > 1e-9)
            throw std::invalid_argument("scene: reflector normal must be a unit vector");
    }
}

Scene generate_scene(const SceneGenConfig &cfg, std::int64_t scene_id)
{
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(scene_id)));

    Scene scene;
    scene.scene_id = scene_id;
    scene.bs_position = Eigen::Vector3d(cfg.bs_x_m, 0.5 * cfg.road_length_m, cfg.bs_height_m);

    const auto count = static_cast<int>(uniform_int(rng, cfg.min_vehicles, cfg.max_vehicles));
    const bool blocked = uniform01(rng) < cfg.blockage_probability && count >= 2 && cfg.lanes >= 2;

    std::vector<Vehicle> placed;
    {
        // A truck or bus roof sits above any blocker's shadow from the mast.
        const VehicleKind drawn = draw_kind(rng);
        const VehicleKind kind = blocked ? VehicleKind::car : drawn;
        const int lo_lane = blocked ? 1 : 0;
        const int lane = static_cast<int>(uniform_int(rng, lo_lane, cfg.lanes - 1));
        placed.push_back(make_vehicle(cfg, kind, lane, draw_y(cfg, kind, rng)));
    }
    const Vehicle rx_vehicle = placed.front();
    const Eigen::Vector3d rx_pos = rx_vehicle.center + Eigen::Vector3d(0, 0, 0.5 * rx_vehicle.size.z());

    if (blocked) {
        bool ok = false;
        for (int attempt = 0; attempt < kPlacementRetries && !ok; ++attempt) {
            const VehicleKind kind = uniform01(rng) < 0.5 ? VehicleKind::truck : VehicleKind::bus;
            const int lane = static_cast<int>(uniform_int(rng, 0, std::max(0, rx_vehicle.lane - 1)));
            const double x = cfg.lane_x(lane);
            const double t = (x - scene.bs_position.x()) / (rx_pos.x() - scene.bs_position.x());
            const double y_cross = scene.bs_position.y() + t * (rx_pos.y() - scene.bs_position.y());
            const double jitter = 0.25 * vehicle_size(kind).y();
            const Vehicle v = make_vehicle(cfg, kind, lane, y_cross + uniform(rng, -jitter, jitter));
            if (on_road(cfg, v) && fits(v, placed) && segment_intersects_box(scene.bs_position, rx_pos, v.box())) {
                placed.push_back(v);
                ok = true;
            }
        }
        if (!ok)
            throw GenerationError("scene " + std::to_string(scene_id) + ": cannot place a blocking vehicle");
    }

    while (static_cast<int>(placed.size()) < count) {
        bool ok = false;
        for (int attempt = 0; attempt < kPlacementRetries && !ok; ++attempt) {
            const VehicleKind kind = draw_kind(rng);
            const int lane = static_cast<int>(uniform_int(rng, 0, cfg.lanes - 1));
            const Vehicle v = make_vehicle(cfg, kind, lane, draw_y(cfg, kind, rng));
            if (fits(v, placed)) {
                placed.push_back(v);
                ok = true;
            }
        }
        if (!ok)
            throw GenerationError("scene " + std::to_string(scene_id) + ": cannot place vehicle " +
                                  std::to_string(placed.size()) + " without overlap");
    }

    // Order vehicles by (lane, along-road position) and track the receiver.
    std::vector<std::size_t> order(placed.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (placed[a].lane != placed[b].lane)
            return placed[a].lane < placed[b].lane;
        return placed[a].center.y() < placed[b].center.y();
    });
    for (std::size_t i = 0; i < order.size(); ++i) {
        scene.vehicles.push_back(placed[order[i]]);
        if (order[i] == 0)
            scene.receiver_vehicle_index = i;
    }
    scene.receiver_position = rx_pos;

    const double far_x = cfg.lane_x(cfg.lanes - 1) + 0.5 * cfg.lane_spacing_m + 3.0;
    if (cfg.reflectors >= 1)
        scene.reflector_planes.push_back({Eigen::Vector3d(far_x, 0, 0), -Eigen::Vector3d::UnitX(), cfg.reflectivity});
    if (cfg.reflectors >= 2)
        scene.reflector_planes.push_back({Eigen::Vector3d(0, 0, 0), Eigen::Vector3d::UnitX(), cfg.reflectivity});
    return scene;
}

PathSet trace_paths(const Scene &scene, double wavelength_m)
{
    PathSet out;
    const Eigen::Vector3d &bs = scene.bs_position;
    const Eigen::Vector3d &rx = scene.receiver_position;

    if (!obstructed(scene, bs, rx)) {
        Path p;
        p.kind = PathKind::los;
        p.length_m = (rx - bs).norm();
        p.aod_azimuth = bs_azimuth(rx - bs);
        p.aoa_azimuth = rx_azimuth(bs - rx);
        p.gain = path_gain(p.length_m, 1.0, wavelength_m);
        out.paths.push_back(p);
    }

    for (const auto &plane : scene.reflector_planes) {
        const double bs_side = (bs - plane.anchor).dot(plane.normal);
        const double rx_side = (rx - plane.anchor).dot(plane.normal);
        if (!(bs_side > 0.0 && rx_side > 0.0))
            continue;
        const Eigen::Vector3d image = bs - 2.0 * bs_side * plane.normal;
        const Eigen::Vector3d dir = rx - image;
        const double denom = dir.dot(plane.normal);
        if (denom == 0.0)
            continue;
        const double t = (plane.anchor - image).dot(plane.normal) / denom;
        const Eigen::Vector3d bounce = image + t * dir;
        if (obstructed(scene, bs, bounce) || obstructed(scene, bounce, rx))
            continue;
        Path p;
        p.kind = PathKind::reflection;
        p.length_m = dir.norm();
        p.aod_azimuth = bs_azimuth(bounce - bs);
        p.aoa_azimuth = rx_azimuth(bounce - rx);
        p.gain = path_gain(p.length_m, plane.reflectivity, wavelength_m);
        out.paths.push_back(p);
    }
    return out;
}

ChannelMatrix<double> synthesize_channel(const PathSet &paths, std::size_t m, std::size_t n)
{
    if (m < 1 || n < 1)
        throw std::invalid_argument("synthesize_channel: array sizes must be positive");
    ChannelMatrix<double> h = ChannelMatrix<double>::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    for (const auto &p : paths.paths)
        h.noalias() += p.gain * ula_steering(p.aod_azimuth, m) * ula_steering(p.aoa_azimuth, n).transpose();
    return h;
}

nlohmann::json scene_to_json(const Scene &scene)
{
    nlohmann::json j;
    j["schema"] = "v1";
    j["scene_id"] = scene.scene_id;
    j["bs_position"] = vec_json(scene.bs_position);
    j["receiver_position"] = vec_json(scene.receiver_position);
    j["receiver_vehicle_index"] = scene.receiver_vehicle_index;
    j["vehicles"] = nlohmann::json::array();
    for (const auto &v : scene.vehicles)
        j["vehicles"].push_back(
            {{"center", vec_json(v.center)}, {"size", vec_json(v.size)}, {"lane", v.lane}, {"kind", to_string(v.kind)}});
    j["reflector_planes"] = nlohmann::json::array();
    for (const auto &p : scene.reflector_planes)
        j["reflector_planes"].push_back(
            {{"anchor", vec_json(p.anchor)}, {"normal", vec_json(p.normal)}, {"reflectivity", p.reflectivity}});
    return j;
}

Scene scene_from_json(const nlohmann::json &j)
{
    if (j.value("schema", "") != "v1")
        throw FormatError("scene JSON: unsupported schema");
    Scene s;
    s.scene_id = j.at("scene_id").get<std::int64_t>();
    s.bs_position = json_vec(j.at("bs_position"));
    s.receiver_position = json_vec(j.at("receiver_position"));
    s.receiver_vehicle_index = j.at("receiver_vehicle_index").get<std::size_t>();
    for (const auto &v : j.at("vehicles"))
        s.vehicles.push_back({json_vec(v.at("center")), json_vec(v.at("size")), v.at("lane").get<int>(),
                              vehicle_kind_from_string(v.at("kind").get<std::string>())});
    for (const auto &p : j.at("reflector_planes"))
        s.reflector_planes.push_back(
            {json_vec(p.at("anchor")), json_vec(p.at("normal")), p.at("reflectivity").get<double>()});
    s.validate();
    return s;
}

nlohmann::json config_to_json(const SceneGenConfig &cfg)
{
    return {{"lanes", cfg.lanes},
            {"lane_spacing_m", cfg.lane_spacing_m},
            {"first_lane_x_m", cfg.first_lane_x_m},
            {"road_length_m", cfg.road_length_m},
            {"min_vehicles", cfg.min_vehicles},
            {"max_vehicles", cfg.max_vehicles},
            {"min_speed_mph", cfg.min_speed_mph},
            {"max_speed_mph", cfg.max_speed_mph},
            {"bs_x_m", cfg.bs_x_m},
            {"bs_height_m", cfg.bs_height_m},
            {"blockage_probability", cfg.blockage_probability},
            {"reflectors", cfg.reflectors},
            {"reflectivity", cfg.reflectivity},
            {"seed", cfg.seed}};
}

} // namespace beamcraft
