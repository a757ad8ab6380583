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

#ifndef BEAMCRAFT_DATASET_HPP
#define BEAMCRAFT_DATASET_HPP

#include "beamcraft/beamspace.hpp"
#include "beamcraft/scenegen.hpp"
#include "beamcraft/sensors.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace beamcraft {

struct RenderParams {
    double gps_noise_sigma_m = 0.5;
    LidarGridSpec lidar;
    TopViewSpec image;
    std::size_t context_capacity = 4;
};

// Codebook element counts (M, N) and the array sizes they steer.
struct CodebookParams {
    std::size_t tx_elements = 32;
    std::size_t rx_elements = 8;
    std::size_t tx_array = 32;
    std::size_t rx_array = 8;
};

struct SceneSample {
    std::int64_t scene_id = 0;
    GpsReading gps;
    LidarGrid lidar;
    TopViewImage image;
    GpsContextVector context;
    BeamPowerMatrix<double> power;
    std::size_t label = 0; // flat index of the optimum beam pair

    Eigen::VectorXd one_hot() const;
};

struct Dataset {
    std::vector<SceneSample> samples;
    std::uint64_t config_digest = 0;
    std::array<std::size_t, 2> codebook_dims{0, 0};
    nlohmann::json config; // generation/render settings the digest is computed from

    std::size_t size() const { return samples.size(); }
    std::size_t pair_count() const { return codebook_dims[0] * codebook_dims[1]; }

    // Homogeneous shapes, consistent labels, digest matching config.
    void validate() const;
};

struct SplitSpec {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DatasetSplit {
    Dataset train;
    Dataset validation;
    Dataset test;
};

std::uint64_t digest_config(const nlohmann::json &config);

// Scenes 0..count-1; scenes without any propagation path are dropped.
Dataset build_dataset(const SceneGenConfig &cfg, const RenderParams &render, std::size_t count,
                      const CodebookParams &codebooks = {});

DatasetSplit split(const Dataset &ds, const SplitSpec &spec);

struct RaymobtimeImportOptions {
    std::size_t tx_elements = 32;
    std::size_t rx_elements = 8;
    RenderParams render;
    std::optional<Eigen::Vector3d> bs_position; // default: receiver centroid at 4 m height
};

// Coordinate table rows: episode, scene, x, y, z, valid flag (optional header
// line). Powers: <beam_dir>/power_<episode>_<scene>.csv. LiDAR (optional):
// <lidar_dir>/lidar_<episode>_<scene>.bin in the beamcraft grid format.
Dataset import_raymobtime(const std::filesystem::path &coord_table, const std::filesystem::path &beam_dir,
                          const std::optional<std::filesystem::path> &lidar_dir,
                          const RaymobtimeImportOptions &options = {});

// Directory with manifest.json plus sample_<id>.{json,lidar,pgm,power.csv}.
void save_dataset(const Dataset &ds, const std::filesystem::path &dir);
Dataset load_dataset(const std::filesystem::path &dir);

} // namespace beamcraft

#endif // BEAMCRAFT_DATASET_HPP
