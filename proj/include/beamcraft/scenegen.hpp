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

#ifndef BEAMCRAFT_SCENEGEN_HPP
#define BEAMCRAFT_SCENEGEN_HPP

#include "beamcraft/beamspace.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

// Synthetic vehicle-to-infrastructure scenes and a single-bounce geometric
// channel. Frame: x across the road (meters east), y along the road (meters
// north), z up. Both arrays are uniform linear arrays laid along y; the BS
// array faces +x, the receiver array faces -x. Azimuths are measured from
// broadside, so sin(azimuth) is the along-array direction cosine.

namespace beamcraft {

inline constexpr double kCarrierWavelengthM = 0.005; // 60 GHz

enum class VehicleKind { car, truck, bus };

std::string to_string(VehicleKind kind);
VehicleKind vehicle_kind_from_string(const std::string &name);

// Length of a vehicle kind as (width x, length y, height z), meters.
Eigen::Vector3d vehicle_size(VehicleKind kind);

struct Box {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::Vector3d size = Eigen::Vector3d::Ones();

    Eigen::Vector3d min() const { return center - 0.5 * size; }
    Eigen::Vector3d max() const { return center + 0.5 * size; }
};

struct Vehicle {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::Vector3d size = Eigen::Vector3d::Ones();
    int lane = 0;
    VehicleKind kind = VehicleKind::car;

    Box box() const { return {center, size}; }
};

// Vertical wall acting as a specular reflector.
struct ReflectorPlane {
    Eigen::Vector3d anchor = Eigen::Vector3d::Zero();
    Eigen::Vector3d normal = Eigen::Vector3d::UnitX();
    double reflectivity = 0.5;
};

struct Scene {
    std::int64_t scene_id = 0;
    Eigen::Vector3d bs_position = Eigen::Vector3d::Zero();
    Eigen::Vector3d receiver_position = Eigen::Vector3d::Zero();
    std::vector<Vehicle> vehicles;
    std::size_t receiver_vehicle_index = 0;
    std::vector<ReflectorPlane> reflector_planes;

    const Vehicle &receiver() const { return vehicles.at(receiver_vehicle_index); }
    void validate() const;
};

struct SceneGenConfig {
    int lanes = 2;
    double lane_spacing_m = 3.5;
    double first_lane_x_m = 6.0;
    double road_length_m = 90.0;
    int min_vehicles = 3;
    int max_vehicles = 8;
    double min_speed_mph = 10.0; // metadata only
    double max_speed_mph = 30.0; // metadata only
    double bs_x_m = 2.0;
    double bs_height_m = 4.0;
    double blockage_probability = 0.3;
    int reflectors = 2; // 0, 1 (far wall) or 2 (far and near wall)
    double reflectivity = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
    double lane_x(int lane) const { return first_lane_x_m + lane_spacing_m * lane; }
};

enum class PathKind { los, reflection };

struct Path {
    PathKind kind = PathKind::los;
    double aod_azimuth = 0.0;
    double aoa_azimuth = 0.0;
    std::complex<double> gain{0.0, 0.0};
    double length_m = 0.0;
};

struct PathSet {
    std::vector<Path> paths;
};

// Deterministic in (cfg.seed, scene_id). Throws GenerationError when a vehicle
// cannot be placed within the retry budget.
Scene generate_scene(const SceneGenConfig &cfg, std::int64_t scene_id);

PathSet trace_paths(const Scene &scene, double wavelength_m = kCarrierWavelengthM);

// Closed segment vs. closed axis-aligned box (slab test).
bool segment_intersects_box(const Eigen::Vector3d &a, const Eigen::Vector3d &b, const Box &box);

bool boxes_overlap(const Box &a, const Box &b);

// Half-wavelength ULA response, entry q = exp(-i pi q sin(theta)).
template <typename Scalar = double>
ComplexVector<Scalar> ula_steering(double theta, std::size_t size)
{
    ComplexVector<Scalar> a(static_cast<Eigen::Index>(size));
    const double s = std::sin(theta);
    for (std::size_t q = 0; q < size; ++q) {
        const double phase = -std::numbers::pi * static_cast<double>(q) * s;
        a(static_cast<Eigen::Index>(q)) =
            std::complex<Scalar>(static_cast<Scalar>(std::cos(phase)), static_cast<Scalar>(std::sin(phase)));
    }
    return a;
}

// H = sum over paths of gain * a_tx(aod) a_rx(aoa)^T, an m x n matrix.
ChannelMatrix<double> synthesize_channel(const PathSet &paths, std::size_t m, std::size_t n);

nlohmann::json scene_to_json(const Scene &scene);
Scene scene_from_json(const nlohmann::json &j);

nlohmann::json config_to_json(const SceneGenConfig &cfg);

} // namespace beamcraft

#endif // BEAMCRAFT_SCENEGEN_HPP
