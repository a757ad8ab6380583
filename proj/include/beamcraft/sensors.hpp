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

#ifndef BEAMCRAFT_SENSORS_HPP
#define BEAMCRAFT_SENSORS_HPP

#include "beamcraft/scenegen.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

namespace beamcraft {

struct GpsReading {
    double latitude_like = 0.0;  // meters east (x)
    double longitude_like = 0.0; // meters north (y)
    double noise_sigma_m = 0.0;
};

enum class LidarCell : std::uint8_t { empty = 0, occupied = 1, tx_marker = 2, rx_marker = 3 };

struct LidarGridSpec {
    std::array<std::size_t, 3> dims{20, 200, 10};
    double cell_size_m = 1.0;
    Eigen::Vector3d origin{0.0, -55.0, 0.0};
};

// Occupancy histogram over an (x, y, z) grid, row-major with z fastest.
struct LidarGrid {
    std::array<std::size_t, 3> dims{0, 0, 0};
    double cell_size_m = 1.0;
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    std::vector<std::uint8_t> cells;

    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * dims[1] + j) * dims[2] + k; }
    std::uint8_t at(std::size_t i, std::size_t j, std::size_t k) const { return cells[index(i, j, k)]; }
    std::size_t cell_count() const { return dims[0] * dims[1] * dims[2]; }
};

struct TopViewSpec {
    std::array<std::size_t, 2> dims{48, 96};
    double meters_per_pixel = 1.0;
    Eigen::Vector2d origin{-4.0, -3.0}; // world (x, y) of pixel (0, 0) corner
};

// Row index runs along x, column index along y.
struct TopViewImage {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pixels;
    double meters_per_pixel = 1.0;
    Eigen::Vector2d origin = Eigen::Vector2d::Zero();
};

inline constexpr float kVehicleGray = 0.5f;
inline constexpr float kBsGray = 0.75f;
inline constexpr float kReceiverGray = 1.0f;

// [r, t_1, t_2, c_1, c_2]: RSU (x, y), then per-lane truck and car (x, y)
// lists of fixed capacity, each ascending along the road, zero padded.
struct GpsContextVector {
    std::vector<double> values;
    std::size_t capacity = 0;

    static std::size_t length_for(std::size_t capacity) { return 2 + 4 * capacity * 2; }
};

GpsReading render_gps(const Scene &scene, double noise_sigma_m, std::uint64_t seed);

LidarGrid render_lidar(const Scene &scene, const LidarGridSpec &spec);

TopViewImage render_topview(const Scene &scene, const TopViewSpec &spec);

GpsContextVector gps_context_vector(const Scene &scene, std::size_t capacity);

// One JSON header line, then raw uint8 cells.
void write_lidar(std::ostream &out, const LidarGrid &grid);
LidarGrid read_lidar(std::istream &in);

// Binary PGM (P5), maxval 255.
void write_pgm(std::ostream &out, const TopViewImage &image);
TopViewImage read_pgm(std::istream &in, double meters_per_pixel = 1.0,
                      const Eigen::Vector2d &origin = Eigen::Vector2d::Zero());

} // namespace beamcraft

#endif // BEAMCRAFT_SENSORS_HPP
