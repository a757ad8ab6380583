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

#include "beamcraft/dataset.hpp"

#include "beamcraft/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace beamcraft {

namespace fs = std::filesystem;

namespace {

nlohmann::json render_to_json(const RenderParams &r)
{
    return {{"gps_noise_sigma_m", r.gps_noise_sigma_m},
            {"lidar",
             {{"dims", r.lidar.dims},
              {"cell_size_m", r.lidar.cell_size_m},
              {"origin", {r.lidar.origin.x(), r.lidar.origin.y(), r.lidar.origin.z()}}}},
            {"image",
             {{"dims", r.image.dims},
              {"meters_per_pixel", r.image.meters_per_pixel},
              {"origin", {r.image.origin.x(), r.image.origin.y()}}}},
            {"context_capacity", r.context_capacity}};
}

std::string hex64(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::uint64_t parse_hex64(const std::string &s)
{
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (ec != std::errc() || p != s.data() + s.size())
        throw FormatError("manifest: bad config_digest '" + s + "'");
    return v;
}

std::string sample_stem(std::int64_t id) { return "sample_" + std::to_string(id); }

std::ofstream open_out(const fs::path &p)
{
    std::ofstream out(p, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open " + p.string() + " for writing");
    return out;
}

std::ifstream open_in(const fs::path &p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + p.string());
    return in;
}

Dataset subset(const Dataset &ds, const std::vector<std::size_t> &indices)
{
    Dataset out;
    out.config_digest = ds.config_digest;
    out.codebook_dims = ds.codebook_dims;
    out.config = ds.config;
    for (auto i : indices)
        out.samples.push_back(ds.samples[i]);
    return out;
}

std::vector<std::string> split_csv(const std::string &line)
{
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ','))
        fields.push_back(f);
    return fields;
}

std::string trim(std::string s)
{
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

bool parse_flag(const std::string &raw)
{
    std::string s = trim(raw);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "1" || s == "v" || s == "valid" || s == "true")
        return true;
    if (s == "0" || s == "i" || s == "invalid" || s == "false")
        return false;
    throw ImportError("coordinate table: unrecognised valid flag '" + raw + "'");
}

} // namespace

Eigen::VectorXd SceneSample::one_hot() const
{
    Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(power.pair_count()));
    y[static_cast<Eigen::Index>(label)] = 1.0;
    return y;
}

std::uint64_t digest_config(const nlohmann::json &config) { return fnv1a64(config.dump()); }

void Dataset::validate() const
{
    if (samples.empty())
        throw EmptyDatasetError("dataset has no samples");
    if (digest_config(config) != config_digest)
        throw FormatError("dataset: config_digest does not match its config");
    const auto &first = samples.front();
    for (const auto &s : samples) {
        if (s.lidar.dims != first.lidar.dims || s.image.pixels.rows() != first.image.pixels.rows() ||
            s.image.pixels.cols() != first.image.pixels.cols() || s.context.values.size() != first.context.values.size())
            throw ShapeError("dataset: sample " + std::to_string(s.scene_id) + " has non-uniform modality shapes");
        if (s.power.tx_count() != codebook_dims[0] || s.power.rx_count() != codebook_dims[1])
            throw ShapeError("dataset: sample " + std::to_string(s.scene_id) + " power matrix does not match codebook dims");
        if (s.label != best_pair_index(s.power))
            throw std::invalid_argument("dataset: sample " + std::to_string(s.scene_id) + " label disagrees with power");
    }
}

void SplitSpec::validate() const
{
    for (double f : {train, validation, test})
        if (!(f >= 0.0 && f <= 1.0))
            throw std::invalid_argument("split fractions must lie in [0, 1]");
    if (std::abs(train + validation + test - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must sum to 1");
}

Dataset build_dataset(const SceneGenConfig &cfg, const RenderParams &render, std::size_t count,
                      const CodebookParams &codebooks)
{
    if (count < 1)
        throw std::invalid_argument("build_dataset: count must be >= 1");
    cfg.validate();
    const auto tx = make_dft_codebook<double>(codebooks.tx_array, codebooks.tx_elements, Side::transmitter);
    const auto rx = make_dft_codebook<double>(codebooks.rx_array, codebooks.rx_elements, Side::receiver);

    Dataset ds;
    ds.codebook_dims = {codebooks.tx_elements, codebooks.rx_elements};
    ds.config = {{"source", "synthetic"},
                 {"scene", config_to_json(cfg)},
                 {"render", render_to_json(render)},
                 {"codebook",
                  {{"tx_elements", codebooks.tx_elements},
                   {"rx_elements", codebooks.rx_elements},
                   {"tx_array", codebooks.tx_array},
                   {"rx_array", codebooks.rx_array}}},
                 {"count", count}};
    ds.config_digest = digest_config(ds.config);

    for (std::size_t i = 0; i < count; ++i) {
        const auto id = static_cast<std::int64_t>(i);
        const Scene scene = generate_scene(cfg, id);
        const PathSet paths = trace_paths(scene);
        const auto h = synthesize_channel(paths, codebooks.tx_array, codebooks.rx_array);
        auto power = power_matrix(tx, rx, h, Normalization::max_one);
        if (!(power.powers.maxCoeff() > 0.0))
            continue;
        SceneSample s;
        s.scene_id = id;
        s.label = best_pair_index(power);
        s.power = std::move(power);
        s.gps = render_gps(scene, render.gps_noise_sigma_m, derive_seed(cfg.seed ^ 0x6770735fULL, i));
        s.lidar = render_lidar(scene, render.lidar);
        s.image = render_topview(scene, render.image);
        s.context = gps_context_vector(scene, render.context_capacity);
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty())
        throw EmptyDatasetError("build_dataset: every scene lacked a propagation path; nothing to label");
    return ds;
}

DatasetSplit split(const Dataset &ds, const SplitSpec &spec)
{
    spec.validate();
    const std::size_t n = ds.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = i;
    Rng rng(spec.seed);
    shuffle(order, rng);

    const auto part = [n](double f) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9)); };
    const std::size_t n_val = part(spec.validation);
    const std::size_t n_test = part(spec.test);
    if (n_val + n_test > n)
        throw SplitError("split: fractions exceed the dataset size");
    const std::size_t n_train = n - n_val - n_test;
    if ((spec.train > 0.0 && n_train == 0) || (spec.validation > 0.0 && n_val == 0) || (spec.test > 0.0 && n_test == 0))
        throw SplitError("split: dataset of " + std::to_string(n) + " samples is too small for the requested fractions");

    auto take = [&](std::size_t begin, std::size_t len) {
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                     order.begin() + static_cast<std::ptrdiff_t>(begin + len));
        std::sort(idx.begin(), idx.end());
        return subset(ds, idx);
    };
    return {take(0, n_train), take(n_train, n_val), take(n_train + n_val, n_test)};
}

Dataset import_raymobtime(const fs::path &coord_table, const fs::path &beam_dir,
                          const std::optional<fs::path> &lidar_dir, const RaymobtimeImportOptions &options)
{
    struct Row {
        long episode, scene;
        Eigen::Vector3d pos;
    };
    std::ifstream in(coord_table);
    if (!in)
        throw ImportError("cannot open coordinate table " + coord_table.string());
    std::vector<Row> rows;
    std::string line;
    bool first_line = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (trim(line).empty())
            continue;
        const auto f = split_csv(line);
        long episode = 0;
        const std::string f0 = f.empty() ? std::string() : trim(f[0]);
        const bool numeric = std::from_chars(f0.data(), f0.data() + f0.size(), episode).ec == std::errc();
        if (first_line && !numeric) {
            first_line = false;
            continue; // header
        }
        first_line = false;
        if (f.size() < 6 || !numeric)
            throw ImportError("coordinate table: malformed row '" + line + "'");
        try {
            if (!parse_flag(f[5]))
                continue;
            rows.push_back({episode, std::stol(f[1]), Eigen::Vector3d(std::stod(f[2]), std::stod(f[3]), std::stod(f[4]))});
        } catch (const std::logic_error &) {
            throw ImportError("coordinate table: malformed row '" + line + "'");
        }
    }
    if (rows.empty())
        throw EmptyDatasetError("import_raymobtime: no valid receiver rows");

    Eigen::Vector3d bs;
    if (options.bs_position) {
        bs = *options.bs_position;
    } else {
        Eigen::Vector3d c = Eigen::Vector3d::Zero();
        for (const auto &r : rows)
            c += r.pos;
        c /= static_cast<double>(rows.size());
        bs = Eigen::Vector3d(c.x(), c.y(), 4.0);
    }

    // Fit the image and marker grid frames around the BS and all receivers.
    Eigen::Vector3d lo = bs, hi = bs;
    for (const auto &r : rows) {
        lo = lo.cwiseMin(r.pos);
        hi = hi.cwiseMax(r.pos);
    }
    const Eigen::Vector3d pad(5.0, 5.0, 1.0);
    lo -= pad;
    hi += pad;
    const Eigen::Vector3d extent = hi - lo;
    TopViewSpec image_spec = options.render.image;
    image_spec.meters_per_pixel = std::max(extent.x() / static_cast<double>(image_spec.dims[0]),
                                           extent.y() / static_cast<double>(image_spec.dims[1]));
    image_spec.origin = lo.head<2>();
    LidarGridSpec grid_spec = options.render.lidar;
    grid_spec.cell_size_m = 0.0;
    for (int a = 0; a < 3; ++a)
        grid_spec.cell_size_m = std::max(grid_spec.cell_size_m, extent[a] / static_cast<double>(grid_spec.dims[static_cast<std::size_t>(a)]));
    grid_spec.origin = lo;

    Dataset ds;
    ds.codebook_dims = {options.tx_elements, options.rx_elements};
    ds.config = {{"source", "raymobtime"},
                 {"coord_table", coord_table.filename().string()},
                 {"tx_elements", options.tx_elements},
                 {"rx_elements", options.rx_elements},
                 {"bs_position", {bs.x(), bs.y(), bs.z()}},
                 {"lidar_provided", lidar_dir.has_value()},
                 {"render", render_to_json(options.render)}};
    ds.config_digest = digest_config(ds.config);

    std::int64_t next_id = 0;
    for (const auto &r : rows) {
        const std::string tag = std::to_string(r.episode) + "_" + std::to_string(r.scene);
        const fs::path power_path = beam_dir / ("power_" + tag + ".csv");
        std::ifstream pin(power_path);
        if (!pin)
            throw ImportError("import_raymobtime: missing power file for episode " + std::to_string(r.episode) +
                              " scene " + std::to_string(r.scene) + " (" + power_path.string() + ")");
        Eigen::MatrixXd raw;
        try {
            raw = read_power_csv(pin);
        } catch (const std::exception &e) {
            throw ImportError("import_raymobtime: " + power_path.string() + ": " + e.what());
        }
        if (static_cast<std::size_t>(raw.rows()) != options.tx_elements ||
            static_cast<std::size_t>(raw.cols()) != options.rx_elements)
            throw ImportError("import_raymobtime: " + power_path.string() + " is " + std::to_string(raw.rows()) + "x" +
                              std::to_string(raw.cols()) + ", declared " + std::to_string(options.tx_elements) + "x" +
                              std::to_string(options.rx_elements));
        auto power = normalize_max_one(BeamPowerMatrix<double>{raw, Normalization::raw});
        if (!(power.powers.maxCoeff() > 0.0))
            continue;

        Scene scene;
        scene.scene_id = next_id;
        scene.bs_position = bs;
        scene.receiver_position = r.pos;
        Vehicle car;
        car.kind = VehicleKind::car;
        car.size = vehicle_size(VehicleKind::car);
        car.center = r.pos - Eigen::Vector3d(0, 0, 0.5 * car.size.z());
        scene.vehicles.push_back(car);

        SceneSample s;
        s.scene_id = next_id++;
        s.label = best_pair_index(power);
        s.power = std::move(power);
        s.gps = GpsReading{r.pos.x(), r.pos.y(), 0.0};
        s.image = render_topview(scene, image_spec);
        s.context = gps_context_vector(scene, options.render.context_capacity);
        if (lidar_dir) {
            const fs::path lp = *lidar_dir / ("lidar_" + tag + ".bin");
            std::ifstream lin(lp, std::ios::binary);
            if (!lin)
                throw ImportError("import_raymobtime: missing LiDAR grid for episode " + std::to_string(r.episode) +
                                  " scene " + std::to_string(r.scene) + " (" + lp.string() + ")");
            s.lidar = read_lidar(lin);
        } else {
            Scene markers = scene;
            markers.vehicles.clear(); // BS and receiver markers only
            s.lidar = render_lidar(markers, grid_spec);
        }
        if (!ds.samples.empty() && s.lidar.dims != ds.samples.front().lidar.dims)
            throw ImportError("import_raymobtime: LiDAR grid dims differ between samples");
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty())
        throw EmptyDatasetError("import_raymobtime: every valid row had an all-zero power matrix");
    return ds;
}

void save_dataset(const Dataset &ds, const fs::path &dir)
{
    fs::create_directories(dir);
    const auto &first = ds.samples.front();
    nlohmann::json manifest;
    manifest["schema"] = "v1";
    manifest["count"] = ds.size();
    manifest["codebook_dims"] = ds.codebook_dims;
    manifest["config_digest"] = hex64(ds.config_digest);
    manifest["config"] = ds.config;
    manifest["dims"] = {{"lidar", first.lidar.dims},
                        {"image", {first.image.pixels.rows(), first.image.pixels.cols()}},
                        {"context_length", first.context.values.size()},
                        {"pairs", ds.pair_count()}};
    manifest["image"] = {{"meters_per_pixel", first.image.meters_per_pixel},
                         {"origin", {first.image.origin.x(), first.image.origin.y()}}};
    manifest["sample_ids"] = nlohmann::json::array();
    for (const auto &s : ds.samples)
        manifest["sample_ids"].push_back(s.scene_id);
    {
        auto out = open_out(dir / "manifest.json");
        out << manifest.dump(2) << '\n';
    }
    for (const auto &s : ds.samples) {
        const std::string stem = sample_stem(s.scene_id);
        nlohmann::json meta{{"scene_id", s.scene_id},
                            {"gps",
                             {{"latitude_like", s.gps.latitude_like},
                              {"longitude_like", s.gps.longitude_like},
                              {"noise_sigma_m", s.gps.noise_sigma_m}}},
                            {"context", {{"capacity", s.context.capacity}, {"values", s.context.values}}},
                            {"label", s.label},
                            {"power_normalization", s.power.normalization == Normalization::max_one ? "max_one" : "raw"}};
        {
            auto out = open_out(dir / (stem + ".json"));
            out << meta.dump() << '\n';
        }
        {
            auto out = open_out(dir / (stem + ".lidar"));
            write_lidar(out, s.lidar);
        }
        {
            auto out = open_out(dir / (stem + ".pgm"));
            write_pgm(out, s.image);
        }
        {
            auto out = open_out(dir / (stem + ".power.csv"));
            write_power_csv(out, s.power.powers);
        }
    }
}

Dataset load_dataset(const fs::path &dir)
{
    if (!fs::exists(dir / "manifest.json"))
        throw std::runtime_error("no dataset at " + dir.string() + " (manifest.json missing)");
    nlohmann::json manifest;
    {
        auto in = open_in(dir / "manifest.json");
        manifest = nlohmann::json::parse(in);
    }
    if (manifest.value("schema", "") != "v1")
        throw FormatError("manifest: unsupported schema");
    Dataset ds;
    ds.codebook_dims = manifest.at("codebook_dims").get<std::array<std::size_t, 2>>();
    ds.config = manifest.at("config");
    ds.config_digest = parse_hex64(manifest.at("config_digest").get<std::string>());
    const double mpp = manifest.at("image").at("meters_per_pixel").get<double>();
    const auto origin = manifest.at("image").at("origin").get<std::array<double, 2>>();
    for (const auto &id_json : manifest.at("sample_ids")) {
        const auto id = id_json.get<std::int64_t>();
        const std::string stem = sample_stem(id);
        SceneSample s;
        nlohmann::json meta;
        {
            auto in = open_in(dir / (stem + ".json"));
            meta = nlohmann::json::parse(in);
        }
        s.scene_id = meta.at("scene_id").get<std::int64_t>();
        const auto &g = meta.at("gps");
        s.gps = {g.at("latitude_like").get<double>(), g.at("longitude_like").get<double>(),
                 g.at("noise_sigma_m").get<double>()};
        s.context.capacity = meta.at("context").at("capacity").get<std::size_t>();
        s.context.values = meta.at("context").at("values").get<std::vector<double>>();
        s.label = meta.at("label").get<std::size_t>();
        {
            auto in = open_in(dir / (stem + ".lidar"));
            s.lidar = read_lidar(in);
        }
        {
            auto in = open_in(dir / (stem + ".pgm"));
            s.image = read_pgm(in, mpp, Eigen::Vector2d(origin[0], origin[1]));
        }
        {
            auto in = open_in(dir / (stem + ".power.csv"));
            s.power.powers = read_power_csv(in);
            s.power.normalization =
                meta.value("power_normalization", "max_one") == "max_one" ? Normalization::max_one : Normalization::raw;
        }
        ds.samples.push_back(std::move(s));
    }
    if (ds.size() != manifest.at("count").get<std::size_t>())
        throw FormatError("manifest: count does not match sample_ids");
    ds.validate();
    return ds;
}

} // namespace beamcraft
