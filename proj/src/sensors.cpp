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

#include "beamcraft/sensors.hpp"

#include "beamcraft/random.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

namespace beamcraft {

namespace {

// Cell c along one axis spans [origin + c*size, origin + (c+1)*size).
long cell_of(double coord, double origin, double size)
{
    return static_cast<long>(std::floor((coord - origin) / size));
}

bool cell_overlaps(const Box &box, const LidarGrid &g, std::size_t i, std::size_t j, std::size_t k)
{
    const Eigen::Vector3d lo = box.min(), hi = box.max();
    const std::array<std::size_t, 3> idx{i, j, k};
    for (int a = 0; a < 3; ++a) {
        const double cmin = g.origin[a] + static_cast<double>(idx[static_cast<std::size_t>(a)]) * g.cell_size_m;
        const double cmax = cmin + g.cell_size_m;
        if (!(lo[a] < cmax && hi[a] > cmin))
            return false;
    }
    return true;
}

std::array<std::size_t, 3> marker_cell(const LidarGrid &g, const Eigen::Vector3d &p, const char *what)
{
    std::array<std::size_t, 3> idx{};
    for (int a = 0; a < 3; ++a) {
        const long c = cell_of(p[a], g.origin[a], g.cell_size_m);
        if (c < 0 || c >= static_cast<long>(g.dims[static_cast<std::size_t>(a)]))
            throw OutOfBoundsError(std::string("render_lidar: ") + what + " position lies outside the grid");
        idx[static_cast<std::size_t>(a)] = static_cast<std::size_t>(c);
    }
    return idx;
}

// Pixel p along one axis has its center at origin + (p + 0.5) * mpp.
std::pair<long, long> center_range(double lo, double hi, double origin, double mpp, std::size_t n)
{
    long first = static_cast<long>(std::ceil((lo - origin) / mpp - 0.5));
    long last = static_cast<long>(std::floor((hi - origin) / mpp - 0.5));
    first = std::max(first, 0L);
    last = std::min(last, static_cast<long>(n) - 1);
    return {first, last};
}

bool pixel_of(const TopViewImage &img, const Eigen::Vector3d &p, long &r, long &c)
{
    r = static_cast<long>(std::floor((p.x() - img.origin.x()) / img.meters_per_pixel));
    c = static_cast<long>(std::floor((p.y() - img.origin.y()) / img.meters_per_pixel));
    return r >= 0 && c >= 0 && r < img.pixels.rows() && c < img.pixels.cols();
}

void paint_footprint(TopViewImage &img, const Box &box, float value)
{
    const Eigen::Vector3d lo = box.min(), hi = box.max();
    const auto [r0, r1] = center_range(lo.x(), hi.x(), img.origin.x(), img.meters_per_pixel,
                                       static_cast<std::size_t>(img.pixels.rows()));
    const auto [c0, c1] = center_range(lo.y(), hi.y(), img.origin.y(), img.meters_per_pixel,
                                       static_cast<std::size_t>(img.pixels.cols()));
    for (long r = r0; r <= r1; ++r)
        for (long c = c0; c <= c1; ++c)
            img.pixels(r, c) = value;
}

std::string read_token(std::istream &in)
{
    std::string tok;
    char ch;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty())
                break;
            continue;
        }
        tok.push_back(ch);
    }
    return tok;
}

} // namespace

GpsReading render_gps(const Scene &scene, double noise_sigma_m, std::uint64_t seed)
{
    if (!(noise_sigma_m >= 0.0))
        throw std::invalid_argument("render_gps: noise sigma must be >= 0");
    GpsReading g;
    g.noise_sigma_m = noise_sigma_m;
    g.latitude_like = scene.receiver_position.x();
    g.longitude_like = scene.receiver_position.y();
    if (noise_sigma_m > 0.0) {
        Rng rng(seed);
        g.latitude_like += noise_sigma_m * standard_normal(rng);
        g.longitude_like += noise_sigma_m * standard_normal(rng);
    }
    return g;
}

LidarGrid render_lidar(const Scene &scene, const LidarGridSpec &spec)
{
    if (spec.dims[0] == 0 || spec.dims[1] == 0 || spec.dims[2] == 0 || !(spec.cell_size_m > 0.0))
        throw std::invalid_argument("render_lidar: grid dims and cell size must be positive");
    LidarGrid g;
    g.dims = spec.dims;
    g.cell_size_m = spec.cell_size_m;
    g.origin = spec.origin;
    g.cells.assign(g.cell_count(), static_cast<std::uint8_t>(LidarCell::empty));

    const auto bs = marker_cell(g, scene.bs_position, "BS");
    const auto rx = marker_cell(g, scene.receiver_position, "receiver");
    if (bs == rx)
        throw std::invalid_argument("render_lidar: BS and receiver fall into the same cell");

    for (const auto &v : scene.vehicles) {
        const Box box = v.box();
        const Eigen::Vector3d lo = box.min(), hi = box.max();
        std::array<std::pair<long, long>, 3> range{};
        bool empty = false;
        for (int a = 0; a < 3; ++a) {
            // Candidate range padded by one cell; the exact predicate decides.
            long first = cell_of(lo[a], g.origin[a], g.cell_size_m) - 1;
            long last = cell_of(hi[a], g.origin[a], g.cell_size_m) + 1;
            first = std::max(first, 0L);
            last = std::min(last, static_cast<long>(g.dims[static_cast<std::size_t>(a)]) - 1);
            empty = empty || first > last;
            range[static_cast<std::size_t>(a)] = {first, last};
        }
        if (empty)
            continue;
        for (long i = range[0].first; i <= range[0].second; ++i)
            for (long j = range[1].first; j <= range[1].second; ++j)
                for (long k = range[2].first; k <= range[2].second; ++k) {
                    const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j),
                               uk = static_cast<std::size_t>(k);
                    if (cell_overlaps(box, g, ui, uj, uk))
                        g.cells[g.index(ui, uj, uk)] = static_cast<std::uint8_t>(LidarCell::occupied);
                }
    }
    g.cells[g.index(bs[0], bs[1], bs[2])] = static_cast<std::uint8_t>(LidarCell::tx_marker);
    g.cells[g.index(rx[0], rx[1], rx[2])] = static_cast<std::uint8_t>(LidarCell::rx_marker);
    return g;
}

TopViewImage render_topview(const Scene &scene, const TopViewSpec &spec)
{
    if (spec.dims[0] == 0 || spec.dims[1] == 0 || !(spec.meters_per_pixel > 0.0))
        throw std::invalid_argument("render_topview: image dims and scale must be positive");
    TopViewImage img;
    img.meters_per_pixel = spec.meters_per_pixel;
    img.origin = spec.origin;
    img.pixels.setZero(static_cast<Eigen::Index>(spec.dims[0]), static_cast<Eigen::Index>(spec.dims[1]));

    long rr = 0, rc = 0;
    if (!pixel_of(img, scene.receiver_position, rr, rc))
        throw OutOfBoundsError("render_topview: receiver lies outside the image frame");

    for (std::size_t i = 0; i < scene.vehicles.size(); ++i)
        if (i != scene.receiver_vehicle_index)
            paint_footprint(img, scene.vehicles[i].box(), kVehicleGray);
    paint_footprint(img, scene.receiver().box(), kReceiverGray);
    img.pixels(rr, rc) = kReceiverGray;

    long br = 0, bc = 0;
    if (pixel_of(img, scene.bs_position, br, bc))
        img.pixels(br, bc) = kBsGray;
    return img;
}

GpsContextVector gps_context_vector(const Scene &scene, std::size_t capacity)
{
    if (capacity < 1)
        throw std::invalid_argument("gps_context_vector: capacity must be >= 1");
    GpsContextVector out;
    out.capacity = capacity;
    out.values.assign(GpsContextVector::length_for(capacity), 0.0);
    out.values[0] = scene.bs_position.x();
    out.values[1] = scene.bs_position.y();

    const Eigen::Vector2d rx = scene.receiver_position.head<2>();
    // List order: trucks lane 0, trucks lane 1, cars lane 0, cars lane 1. Buses count as trucks.
    for (std::size_t list = 0; list < 4; ++list) {
        const bool large = list < 2;
        const int lane = static_cast<int>(list % 2);
        std::vector<const Vehicle *> members;
        for (const auto &v : scene.vehicles)
            if (v.lane == lane && (v.kind != VehicleKind::car) == large)
                members.push_back(&v);
        if (members.size() > capacity) {
            std::stable_sort(members.begin(), members.end(), [&](const Vehicle *a, const Vehicle *b) {
                return (a->center.head<2>() - rx).norm() < (b->center.head<2>() - rx).norm();
            });
            members.resize(capacity);
        }
        std::stable_sort(members.begin(), members.end(),
                         [](const Vehicle *a, const Vehicle *b) { return a->center.y() < b->center.y(); });
        const std::size_t base = 2 + list * capacity * 2;
        for (std::size_t s = 0; s < members.size(); ++s) {
            out.values[base + 2 * s] = members[s]->center.x();
            out.values[base + 2 * s + 1] = members[s]->center.y();
        }
    }
    return out;
}

void write_lidar(std::ostream &out, const LidarGrid &grid)
{
    nlohmann::json header{{"format", "beamcraft-lidar"},
                          {"version", "v1"},
                          {"dims", grid.dims},
                          {"cell_size_m", grid.cell_size_m},
                          {"origin", {grid.origin.x(), grid.origin.y(), grid.origin.z()}}};
    out << header.dump() << '\n';
    out.write(reinterpret_cast<const char *>(grid.cells.data()), static_cast<std::streamsize>(grid.cells.size()));
}

LidarGrid read_lidar(std::istream &in)
{
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("lidar grid: missing header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("lidar grid: bad header: ") + e.what());
    }
    if (header.value("version", "") != "v1")
        throw FormatError("lidar grid: unsupported version");
    LidarGrid g;
    g.dims = header.at("dims").get<std::array<std::size_t, 3>>();
    g.cell_size_m = header.at("cell_size_m").get<double>();
    const auto o = header.at("origin").get<std::array<double, 3>>();
    g.origin = Eigen::Vector3d(o[0], o[1], o[2]);
    g.cells.resize(g.cell_count());
    in.read(reinterpret_cast<char *>(g.cells.data()), static_cast<std::streamsize>(g.cells.size()));
    if (in.gcount() != static_cast<std::streamsize>(g.cells.size()))
        throw FormatError("lidar grid: truncated payload");
    for (auto c : g.cells)
        if (c > 3)
            throw FormatError("lidar grid: cell value out of range");
    return g;
}

void write_pgm(std::ostream &out, const TopViewImage &image)
{
    out << "P5\n" << image.pixels.cols() << ' ' << image.pixels.rows() << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(image.pixels.size()));
    for (Eigen::Index r = 0; r < image.pixels.rows(); ++r)
        for (Eigen::Index c = 0; c < image.pixels.cols(); ++c) {
            const float v = std::clamp(image.pixels(r, c), 0.0f, 1.0f);
            bytes[static_cast<std::size_t>(r * image.pixels.cols() + c)] =
                static_cast<unsigned char>(std::lround(v * 255.0f));
        }
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TopViewImage read_pgm(std::istream &in, double meters_per_pixel, const Eigen::Vector2d &origin)
{
    if (read_token(in) != "P5")
        throw FormatError("PGM: expected P5 magic");
    long cols = 0, rows = 0, maxval = 0;
    try {
        cols = std::stol(read_token(in));
        rows = std::stol(read_token(in));
        maxval = std::stol(read_token(in));
    } catch (const std::exception &) {
        throw FormatError("PGM: malformed header");
    }
    if (cols <= 0 || rows <= 0 || maxval <= 0 || maxval > 255)
        throw FormatError("PGM: unsupported dimensions or maxval");
    std::vector<unsigned char> bytes(static_cast<std::size_t>(rows * cols));
    in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw FormatError("PGM: truncated payload");
    TopViewImage img;
    img.meters_per_pixel = meters_per_pixel;
    img.origin = origin;
    img.pixels.resize(rows, cols);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c)
            img.pixels(r, c) = static_cast<float>(bytes[static_cast<std::size_t>(r * cols + c)]) / static_cast<float>(maxval);
    return img;
}

} // namespace beamcraft
