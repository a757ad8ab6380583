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

#ifndef BEAMCRAFT_TESTS_FIXTURES_HPP
#define BEAMCRAFT_TESTS_FIXTURES_HPP

#include "beamcraft/dataset.hpp"
#include "beamcraft/fusion.hpp"
#include "beamcraft/random.hpp"

#include <filesystem>
#include <string>

namespace fixtures {

using namespace beamcraft;

inline std::filesystem::path scratch_dir(const std::string &name)
{
    auto dir = std::filesystem::temp_directory_path() / ("beamcraft_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline LidarGrid empty_grid(std::size_t d0, std::size_t d1, std::size_t d2)
{
    LidarGrid g;
    g.dims = {d0, d1, d2};
    g.cell_size_m = 1.0;
    g.origin = Eigen::Vector3d::Zero();
    g.cells.assign(d0 * d1 * d2, 0);
    g.cells[g.index(0, 0, d2 - 1)] = static_cast<std::uint8_t>(LidarCell::tx_marker);
    g.cells[g.index(d0 - 1, d1 - 1, d2 - 1)] = static_cast<std::uint8_t>(LidarCell::rx_marker);
    return g;
}

inline TopViewImage empty_image(std::size_t rows, std::size_t cols)
{
    TopViewImage img;
    img.pixels.setZero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    return img;
}

// Sample whose power matrix peaks (value 1) at `label`.
inline SceneSample labelled_sample(std::int64_t id, std::size_t label, std::size_t m, std::size_t n)
{
    SceneSample s;
    s.scene_id = id;
    s.power.powers = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    s.power.powers(static_cast<Eigen::Index>(label / n), static_cast<Eigen::Index>(label % n)) = 1.0;
    s.power.normalization = Normalization::max_one;
    s.label = label;
    s.lidar = empty_grid(4, 4, 2);
    s.image = empty_image(4, 4);
    s.context.capacity = 0;
    s.context.values = {0.0, 0.0};
    return s;
}

inline Dataset wrap(std::vector<SceneSample> samples, std::size_t m, std::size_t n, const std::string &name)
{
    Dataset ds;
    ds.samples = std::move(samples);
    ds.codebook_dims = {m, n};
    ds.config = {{"source", "fixture"}, {"name", name}};
    ds.config_digest = digest_config(ds.config);
    return ds;
}

// 16 classes, label = 4a + b. Coordinates carry a, the LiDAR block carries b,
// the image carries (a + b) mod 4: each alone leaves four candidates.
inline Dataset xor_dataset(std::size_t count, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<SceneSample> out;
    for (std::size_t i = 0; i < count; ++i) {
        const auto a = static_cast<std::size_t>(uniform_int(rng, 0, 3));
        const auto b = static_cast<std::size_t>(uniform_int(rng, 0, 3));
        SceneSample s = labelled_sample(static_cast<std::int64_t>(i), 4 * a + b, 4, 4);
        s.gps.latitude_like = 6.0 + 3.5 * static_cast<double>(a) + 0.3 * standard_normal(rng);
        s.gps.longitude_like = 45.0 + 5.0 * standard_normal(rng);
        s.lidar = empty_grid(8, 8, 4);
        for (std::size_t x = 2 * b; x < 2 * b + 2; ++x)
            for (std::size_t y = 2; y < 6; ++y)
                for (std::size_t z = 0; z < 2; ++z)
                    s.lidar.cells[s.lidar.index(x, y, z)] = static_cast<std::uint8_t>(LidarCell::occupied);
        s.image = empty_image(16, 16);
        const auto c = static_cast<Eigen::Index>((a + b) % 4);
        s.image.pixels.block(4 * c, 4, 4, 8).setConstant(kVehicleGray);
        out.push_back(std::move(s));
    }
    return wrap(std::move(out), 4, 4, "xor-" + std::to_string(seed));
}

// Two receiver positions, two beams: the coordinate alone separates them.
inline Dataset two_class_dataset(std::size_t count, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<SceneSample> out;
    for (std::size_t i = 0; i < count; ++i) {
        const auto c = static_cast<std::size_t>(uniform_int(rng, 0, 1));
        SceneSample s = labelled_sample(static_cast<std::int64_t>(i), c, 2, 1);
        s.gps.latitude_like = c == 0 ? 6.0 : 9.5;
        s.gps.longitude_like = (c == 0 ? 20.0 : 70.0) + 0.5 * standard_normal(rng);
        out.push_back(std::move(s));
    }
    return wrap(std::move(out), 2, 1, "two-class-" + std::to_string(seed));
}

// XOR dataset whose coordinates place each of the 16 labels at its own grid point.
inline Dataset label_oracle_dataset(std::size_t count, std::uint64_t seed)
{
    Dataset ds = xor_dataset(count, seed);
    for (auto &s : ds.samples) {
        s.gps.latitude_like = 10.0 * static_cast<double>(s.label % 4);
        s.gps.longitude_like = 10.0 * static_cast<double>(s.label / 4);
    }
    ds.config["name"] = "oracle-" + std::to_string(seed);
    ds.config_digest = digest_config(ds.config);
    return ds;
}

inline FusionConfig small_fusion(std::uint64_t seed = 1)
{
    FusionConfig f;
    f.lidar_embedding = f.image_embedding = f.coordinate_embedding = 16;
    f.fusion_hidden = 32;
    f.deep_hidden = {64, 32, 32};
    f.seed = seed;
    return f;
}

inline TrainConfig fixture_training(std::size_t epochs, std::uint64_t seed = 1)
{
    TrainConfig t;
    t.learning_rate = 0.02;
    t.momentum = 0.9;
    t.batch_size = 8;
    t.epochs = epochs;
    t.seed = seed;
    return t;
}

} // namespace fixtures

#endif // BEAMCRAFT_TESTS_FIXTURES_HPP
