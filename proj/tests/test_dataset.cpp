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

#include "fixtures.hpp"

#include "beamcraft/dataset.hpp"
#include "beamcraft/random.hpp"

#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

using namespace beamcraft;
namespace fs = std::filesystem;

namespace {

SceneGenConfig small_config(std::uint64_t seed)
{
    SceneGenConfig cfg;
    cfg.seed = seed;
    return cfg;
}

RenderParams small_render()
{
    RenderParams r;
    return r;
}

std::string slurp(const fs::path &p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::set<std::int64_t> ids(const Dataset &d)
{
    std::set<std::int64_t> out;
    for (const auto &s : d.samples)
        out.insert(s.scene_id);
    return out;
}

void write_power(const fs::path &p, Eigen::Index m, Eigen::Index n, Rng &rng)
{
    Eigen::MatrixXd pw(m, n);
    for (Eigen::Index i = 0; i < pw.size(); ++i)
        pw.data()[i] = uniform01(rng);
    std::ofstream out(p);
    write_power_csv(out, pw);
}

} // namespace

TEST_CASE("build_dataset determinism and labels")
{
    const auto a = build_dataset(small_config(3), small_render(), 10);
    const auto b = build_dataset(small_config(3), small_render(), 10);
    CHECK(a.config_digest == b.config_digest);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.samples[i].label == b.samples[i].label);
        CHECK(a.samples[i].power.powers == b.samples[i].power.powers);
        CHECK(a.samples[i].lidar.cells == b.samples[i].lidar.cells);
    }
    CHECK(a.codebook_dims == std::array<std::size_t, 2>{32, 8});
    CHECK_NOTHROW(a.validate());
    for (const auto &s : a.samples) {
        const Eigen::VectorXd y = s.one_hot();
        CHECK(y.size() == 256);
        CHECK(y.sum() == 1.0);
        CHECK(y == label_row(s.power));
        CHECK(s.power.powers.maxCoeff() == doctest::Approx(1.0));
    }
    CHECK(build_dataset(small_config(4), small_render(), 10).config_digest != a.config_digest);
    SceneGenConfig other = small_config(3);
    other.lanes = 3;
    CHECK(build_dataset(other, small_render(), 10).config_digest != a.config_digest);
}

TEST_CASE("build_dataset drop rules")
{
    SceneGenConfig los = small_config(5);
    los.min_vehicles = los.max_vehicles = 1;
    los.blockage_probability = 0.0;
    CHECK(build_dataset(los, small_render(), 25).size() == 25);

    SceneGenConfig dark = small_config(5);
    dark.blockage_probability = 1.0;
    dark.reflectors = 0;
    CHECK_THROWS_AS(build_dataset(dark, small_render(), 10), EmptyDatasetError);
    CHECK_THROWS_AS(build_dataset(los, small_render(), 0), std::invalid_argument);
}

TEST_CASE("split examples")
{
    const Dataset ds = fixtures::xor_dataset(10, 1);
    SplitSpec all{1.0, 0.0, 0.0, 3};
    const auto a = split(ds, all);
    CHECK(a.train.size() == 10);
    CHECK(a.validation.size() == 0);
    CHECK(a.test.size() == 0);

    const auto s = split(ds, SplitSpec{0.8, 0.1, 0.1, 3});
    CHECK(s.train.size() == 8);
    CHECK(s.validation.size() == 1);
    CHECK(s.test.size() == 1);
    const auto again = split(ds, SplitSpec{0.8, 0.1, 0.1, 3});
    CHECK(ids(again.train) == ids(s.train));
    CHECK(ids(again.validation) == ids(s.validation));
    CHECK(ids(again.test) == ids(s.test));
    CHECK(s.train.config_digest == ds.config_digest);
    CHECK(s.train.codebook_dims == ds.codebook_dims);

    CHECK_THROWS_AS(split(fixtures::xor_dataset(3, 1), SplitSpec{0.8, 0.1, 0.1, 0}), SplitError);
    CHECK_THROWS_AS(split(ds, SplitSpec{0.5, 0.1, 0.1, 0}), std::invalid_argument);
    CHECK_THROWS_AS(split(ds, SplitSpec{1.2, -0.1, -0.1, 0}), std::invalid_argument);
}

TEST_CASE("property: splits are disjoint, exhaustive and floor-sized")
{
    Rng rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = static_cast<std::size_t>(uniform_int(rng, 20, 120));
        const Dataset ds = fixtures::xor_dataset(n, rng());
        const double v = uniform(rng, 0.05, 0.3), t = uniform(rng, 0.05, 0.3);
        const SplitSpec spec{1.0 - v - t, v, t, rng()};
        const auto s = split(ds, spec);
        CHECK(s.validation.size() == static_cast<std::size_t>(std::floor(double(n) * v + 1e-9)));
        CHECK(s.test.size() == static_cast<std::size_t>(std::floor(double(n) * t + 1e-9)));
        CHECK(s.train.size() + s.validation.size() + s.test.size() == n);
        std::set<std::int64_t> all;
        for (const auto *part : {&s.train, &s.validation, &s.test}) {
            for (std::size_t i = 1; i < part->size(); ++i)
                CHECK(part->samples[i - 1].scene_id < part->samples[i].scene_id);
            for (const auto &x : part->samples)
                CHECK(all.insert(x.scene_id).second);
        }
        CHECK(all == ids(ds));
    }
}

TEST_CASE("dataset round trip")
{
    const auto dir = fixtures::scratch_dir("dataset_roundtrip");
    const auto ds = build_dataset(small_config(8), small_render(), 12);
    save_dataset(ds, dir / "a");
    const auto back = load_dataset(dir / "a");
    save_dataset(back, dir / "b");
    std::size_t files = 0;
    for (const auto &e : fs::directory_iterator(dir / "a")) {
        const auto name = e.path().filename();
        CHECK(slurp(e.path()) == slurp(dir / "b" / name));
        ++files;
    }
    CHECK(files == 1 + 4 * ds.size());
    CHECK(fs::exists(dir / "a" / ("sample_" + std::to_string(ds.samples[0].scene_id) + ".power.csv")));

    REQUIRE(back.size() == ds.size());
    CHECK(back.config_digest == ds.config_digest);
    CHECK(back.config == ds.config);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto &x = ds.samples[i], &y = back.samples[i];
        CHECK(x.scene_id == y.scene_id);
        CHECK(x.label == y.label);
        CHECK(x.power.powers == y.power.powers);
        CHECK(x.lidar.cells == y.lidar.cells);
        CHECK(x.gps.latitude_like == y.gps.latitude_like);
        CHECK(x.gps.longitude_like == y.gps.longitude_like);
        CHECK(x.context.values == y.context.values);
        CHECK((x.image.pixels - y.image.pixels).cwiseAbs().maxCoeff() <= 1.0f / 510.0f + 1e-7f);
        CHECK(x.image.meters_per_pixel == y.image.meters_per_pixel);
        CHECK(x.image.origin == y.image.origin);
    }

    const auto manifest = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
    CHECK(manifest.at("schema") == "v1");
    CHECK(manifest.at("count") == ds.size());
    CHECK(manifest.contains("config_digest"));
    CHECK(manifest.contains("dims"));

    CHECK_THROWS(load_dataset(dir / "missing"));
    auto tampered = manifest;
    tampered["config"]["count"] = 13;
    std::ofstream(dir / "a" / "manifest.json") << tampered.dump();
    CHECK_THROWS_AS(load_dataset(dir / "a"), FormatError);
}

TEST_CASE("raymobtime import")
{
    const auto dir = fixtures::scratch_dir("raymobtime");
    Rng rng(61);
    fs::create_directories(dir / "beams");
    {
        std::ofstream c(dir / "coords.csv");
        c << "Episode,Scene,x,y,z,Val\n"
          << "0,0,750.1,640.2,1.6,I\n"
          << "0,1,752.4,655.9,1.6,V\n"
          << "0,2,748.0,670.5,1.6,I\n";
    }
    write_power(dir / "beams" / "power_0_1.csv", 32, 8, rng);
    const auto ds = import_raymobtime(dir / "coords.csv", dir / "beams", std::nullopt);
    REQUIRE(ds.size() == 1);
    CHECK(ds.codebook_dims == std::array<std::size_t, 2>{32, 8});
    CHECK(ds.pair_count() == 256);
    CHECK(ds.samples[0].one_hot().size() == 256);
    CHECK(ds.samples[0].gps.latitude_like == 752.4);
    CHECK(std::count(ds.samples[0].lidar.cells.begin(), ds.samples[0].lidar.cells.end(), 2) == 1);
    CHECK(std::count(ds.samples[0].lidar.cells.begin(), ds.samples[0].lidar.cells.end(), 3) == 1);
    CHECK_NOTHROW(ds.validate());

    std::ifstream pin(dir / "beams" / "power_0_1.csv");
    const Eigen::MatrixXd raw = read_power_csv(pin);
    Eigen::Index r = 0, c = 0;
    raw.maxCoeff(&r, &c);
    CHECK(ds.samples[0].label == static_cast<std::size_t>(r * 8 + c));

    write_power(dir / "beams" / "power_0_1.csv", 16, 8, rng);
    CHECK_THROWS_AS(import_raymobtime(dir / "coords.csv", dir / "beams", std::nullopt), ImportError);

    fs::remove(dir / "beams" / "power_0_1.csv");
    try {
        import_raymobtime(dir / "coords.csv", dir / "beams", std::nullopt);
        FAIL("expected an import error");
    } catch (const ImportError &e) {
        const std::string msg = e.what();
        CHECK(msg.find("scene 1") != std::string::npos);
    }
}

TEST_CASE("raymobtime import with lidar grids")
{
    const auto dir = fixtures::scratch_dir("raymobtime_lidar");
    Rng rng(67);
    fs::create_directories(dir / "beams");
    fs::create_directories(dir / "lidar");
    {
        std::ofstream c(dir / "coords.csv");
        for (int s = 0; s < 4; ++s)
            c << "3," << s << ',' << 10.0 + s << ",20.0,1.5,valid\n";
    }
    for (int s = 0; s < 4; ++s) {
        write_power(dir / "beams" / ("power_3_" + std::to_string(s) + ".csv"), 32, 8, rng);
        std::ofstream l(dir / "lidar" / ("lidar_3_" + std::to_string(s) + ".bin"), std::ios::binary);
        write_lidar(l, fixtures::empty_grid(6, 7, 3));
    }
    const auto ds = import_raymobtime(dir / "coords.csv", dir / "beams", dir / "lidar");
    CHECK(ds.size() == 4);
    CHECK(ds.samples[2].lidar.dims == std::array<std::size_t, 3>{6, 7, 3});
    fs::remove(dir / "lidar" / "lidar_3_2.bin");
    CHECK_THROWS_AS(import_raymobtime(dir / "coords.csv", dir / "beams", dir / "lidar"), ImportError);
}
