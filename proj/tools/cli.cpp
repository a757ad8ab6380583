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

#include "cli.hpp"

#include "beamcraft/beamspace.hpp"
#include "beamcraft/dataset.hpp"
#include "beamcraft/fusion.hpp"
#include "beamcraft/scenegen.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace beamcraft::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

const std::vector<std::string> kModelNames{"coordinate", "image", "lidar", "aggregated", "incremental", "deep"};

void write_text(const fs::path &path, const std::string &text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out)
        throw std::runtime_error("write failed: " + path.string());
}

json read_json_file(const fs::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw UsageError("cannot open config file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw UsageError("config file " + path.string() + ": " + e.what());
    }
}

// Defaults, overlaid by the config file (known keys only), overlaid by flags given on the command line.
class RunConfig {
public:
    explicit RunConfig(json defaults) : cfg_(std::move(defaults)) {}

    void load_file(const std::string &path)
    {
        if (path.empty())
            return;
        const json file = read_json_file(path);
        if (!file.is_object())
            throw UsageError("config file " + path + " must hold a JSON object");
        for (const auto &[key, value] : file.items()) {
            if (!cfg_.contains(key))
                throw UsageError("unknown config key '" + key + "' in " + path);
            cfg_[key] = value;
        }
    }

    template <typename T>
    void flag(const CLI::Option *opt, const std::string &key, const T &value)
    {
        if (opt->count() > 0)
            cfg_[key] = value;
    }

    // Flag or config value, else BEAMCRAFT_SEED, else 0.
    void resolve_seed()
    {
        if (!cfg_["seed"].is_null())
            return;
        if (const char *env = std::getenv("BEAMCRAFT_SEED"); env && *env) {
            std::uint64_t v = 0;
            const char *end = env + std::char_traits<char>::length(env);
            const auto [p, ec] = std::from_chars(env, end, v);
            if (ec != std::errc{} || p != end)
                throw UsageError(std::string("BEAMCRAFT_SEED is not an unsigned integer: ") + env);
            cfg_["seed"] = v;
        } else {
            cfg_["seed"] = 0;
        }
    }

    template <typename T>
    T get(const std::string &key) const
    {
        try {
            return cfg_.at(key).get<T>();
        } catch (const json::exception &e) {
            throw UsageError("config key '" + key + "': " + e.what());
        }
    }

    json &raw() { return cfg_; }
    const json &raw() const { return cfg_; }

private:
    json cfg_;
};

std::vector<std::string> split_list(const std::string &text)
{
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty())
            out.push_back(item);
    return out;
}

std::vector<std::size_t> parse_positive_list(const json &value, const std::string &key)
{
    std::vector<std::size_t> out;
    auto push = [&](long long v) {
        if (v <= 0)
            throw UsageError(key + ": values must be positive, got " + std::to_string(v));
        out.push_back(static_cast<std::size_t>(v));
    };
    if (value.is_array()) {
        for (const auto &v : value) {
            if (!v.is_number_integer())
                throw UsageError(key + ": expected integers");
            push(v.get<long long>());
        }
    } else if (value.is_string()) {
        for (const auto &s : split_list(value.get<std::string>())) {
            long long v = 0;
            const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size())
                throw UsageError(key + ": '" + s + "' is not an integer");
            push(v);
        }
    } else {
        throw UsageError(key + ": expected a list");
    }
    if (out.empty())
        throw UsageError(key + ": empty list");
    return out;
}

void write_resolved(const fs::path &dir, const RunConfig &cfg)
{
    write_text(dir / "resolved.json", cfg.raw().dump(2) + "\n");
}

void write_splits(const DatasetSplit &parts, const fs::path &out, std::ostream &log)
{
    save_dataset(parts.train, out / "train");
    save_dataset(parts.validation, out / "val");
    save_dataset(parts.test, out / "test");
    const json manifest = {{"format", "beamcraft-dataset-root"},
                           {"version", "v1"},
                           {"config_digest", parts.train.config_digest},
                           {"codebook", parts.train.codebook_dims},
                           {"splits", {{"train", parts.train.size()},
                                       {"val", parts.validation.size()},
                                       {"test", parts.test.size()}}}};
    write_text(out / "manifest.json", manifest.dump(2) + "\n");
    log << "wrote " << parts.train.size() << " train, " << parts.validation.size() << " val, "
        << parts.test.size() << " test samples to " << out.string() << '\n';
}

SplitSpec split_from(const RunConfig &cfg)
{
    SplitSpec s;
    s.train = cfg.get<double>("train_fraction");
    s.validation = cfg.get<double>("val_fraction");
    s.test = cfg.get<double>("test_fraction");
    s.seed = cfg.get<std::uint64_t>("seed");
    try {
        s.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    return s;
}

// ---- gen ----

struct GenFlags {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    long long count = 0;
    long long tx = 32, rx = 8;
    int lanes = 2, min_vehicles = 3, max_vehicles = 8, reflectors = 2;
    double blockage = 0.3, reflectivity = 0.5, gps_sigma = 0.5;
    long long context_capacity = 4;
    double train_fraction = 0.8, val_fraction = 0.1, test_fraction = 0.1;
    std::map<std::string, CLI::Option *> opts;
};

void add_gen(CLI::App &app, GenFlags &f)
{
    auto *c = app.add_subcommand("gen", "Generate a synthetic dataset and split it");
    c->add_option("--config", f.config, "JSON config file");
    f.opts["seed"] = c->add_option("--seed", f.seed, "Seed (falls back to BEAMCRAFT_SEED)");
    f.opts["out"] = c->add_option("--out", f.out, "Output directory");
    f.opts["count"] = c->add_option("--count", f.count, "Number of scenes")->check(CLI::PositiveNumber);
    f.opts["tx"] = c->add_option("--tx", f.tx, "Transmit codebook size M")->check(CLI::PositiveNumber);
    f.opts["rx"] = c->add_option("--rx", f.rx, "Receive codebook size N")->check(CLI::PositiveNumber);
    f.opts["lanes"] = c->add_option("--lanes", f.lanes, "Number of lanes");
    f.opts["min_vehicles"] = c->add_option("--min-vehicles", f.min_vehicles);
    f.opts["max_vehicles"] = c->add_option("--max-vehicles", f.max_vehicles);
    f.opts["blockage"] = c->add_option("--blockage", f.blockage, "Probability of a blocked line of sight");
    f.opts["reflectors"] = c->add_option("--reflectors", f.reflectors, "Reflecting walls (0, 1 or 2)");
    f.opts["reflectivity"] = c->add_option("--reflectivity", f.reflectivity);
    f.opts["gps_sigma"] = c->add_option("--gps-sigma", f.gps_sigma, "GPS noise, meters");
    f.opts["context_capacity"] = c->add_option("--context-capacity", f.context_capacity);
    f.opts["train_fraction"] = c->add_option("--train-fraction", f.train_fraction);
    f.opts["val_fraction"] = c->add_option("--val-fraction", f.val_fraction);
    f.opts["test_fraction"] = c->add_option("--test-fraction", f.test_fraction);
}

int cmd_gen(GenFlags &f, std::ostream &out)
{
    RunConfig cfg(json{{"seed", nullptr},
                       {"out", nullptr},
                       {"count", 1000},
                       {"tx", 32},
                       {"rx", 8},
                       {"lanes", 2},
                       {"min_vehicles", 3},
                       {"max_vehicles", 8},
                       {"blockage", 0.3},
                       {"reflectors", 2},
                       {"reflectivity", 0.5},
                       {"gps_sigma", 0.5},
                       {"context_capacity", 4},
                       {"train_fraction", 0.8},
                       {"val_fraction", 0.1},
                       {"test_fraction", 0.1}});
    cfg.load_file(f.config);
    cfg.flag(f.opts["seed"], "seed", f.seed);
    cfg.flag(f.opts["out"], "out", f.out);
    cfg.flag(f.opts["count"], "count", f.count);
    cfg.flag(f.opts["tx"], "tx", f.tx);
    cfg.flag(f.opts["rx"], "rx", f.rx);
    cfg.flag(f.opts["lanes"], "lanes", f.lanes);
    cfg.flag(f.opts["min_vehicles"], "min_vehicles", f.min_vehicles);
    cfg.flag(f.opts["max_vehicles"], "max_vehicles", f.max_vehicles);
    cfg.flag(f.opts["blockage"], "blockage", f.blockage);
    cfg.flag(f.opts["reflectors"], "reflectors", f.reflectors);
    cfg.flag(f.opts["reflectivity"], "reflectivity", f.reflectivity);
    cfg.flag(f.opts["gps_sigma"], "gps_sigma", f.gps_sigma);
    cfg.flag(f.opts["context_capacity"], "context_capacity", f.context_capacity);
    cfg.flag(f.opts["train_fraction"], "train_fraction", f.train_fraction);
    cfg.flag(f.opts["val_fraction"], "val_fraction", f.val_fraction);
    cfg.flag(f.opts["test_fraction"], "test_fraction", f.test_fraction);
    cfg.resolve_seed();

    if (cfg.raw()["out"].is_null())
        throw UsageError("gen: --out is required");
    const auto count = cfg.get<long long>("count");
    if (count <= 0)
        throw UsageError("gen: count must be positive");
    const auto tx = cfg.get<long long>("tx"), rx = cfg.get<long long>("rx");
    if (tx <= 0 || rx <= 0)
        throw UsageError("gen: codebook sizes must be positive");
    const auto cap = cfg.get<long long>("context_capacity");
    if (cap < 0)
        throw UsageError("gen: context_capacity must be nonnegative");

    SceneGenConfig sg;
    sg.lanes = cfg.get<int>("lanes");
    sg.min_vehicles = cfg.get<int>("min_vehicles");
    sg.max_vehicles = cfg.get<int>("max_vehicles");
    sg.blockage_probability = cfg.get<double>("blockage");
    sg.reflectors = cfg.get<int>("reflectors");
    sg.reflectivity = cfg.get<double>("reflectivity");
    sg.seed = cfg.get<std::uint64_t>("seed");
    try {
        sg.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    RenderParams render;
    render.gps_noise_sigma_m = cfg.get<double>("gps_sigma");
    render.context_capacity = static_cast<std::size_t>(cap);
    CodebookParams books;
    books.tx_elements = books.tx_array = static_cast<std::size_t>(tx);
    books.rx_elements = books.rx_array = static_cast<std::size_t>(rx);
    const SplitSpec spec = split_from(cfg);

    const fs::path dir = cfg.get<std::string>("out");
    const Dataset ds = build_dataset(sg, render, static_cast<std::size_t>(count), books);
    write_splits(split(ds, spec), dir, out);
    write_resolved(dir, cfg);
    return kOk;
}

// ---- import ----

struct ImportFlags {
    std::string config, coords, beams, lidar, out;
    std::uint64_t seed = 0;
    long long tx = 32, rx = 8;
    double train_fraction = 0.8, val_fraction = 0.1, test_fraction = 0.1;
    std::map<std::string, CLI::Option *> opts;
};

void add_import(CLI::App &app, ImportFlags &f)
{
    auto *c = app.add_subcommand("import", "Import a Raymobtime-style export as a dataset");
    c->add_option("--config", f.config, "JSON config file");
    f.opts["coords"] = c->add_option("--coords", f.coords, "Coordinate table (episode,scene,x,y,z,valid)");
    f.opts["beams"] = c->add_option("--beams", f.beams, "Directory of power_<episode>_<scene>.csv files");
    f.opts["lidar"] = c->add_option("--lidar", f.lidar, "Directory of lidar_<episode>_<scene>.bin files");
    f.opts["out"] = c->add_option("--out", f.out, "Output directory");
    f.opts["seed"] = c->add_option("--seed", f.seed, "Split seed");
    f.opts["tx"] = c->add_option("--tx", f.tx)->check(CLI::PositiveNumber);
    f.opts["rx"] = c->add_option("--rx", f.rx)->check(CLI::PositiveNumber);
    f.opts["train_fraction"] = c->add_option("--train-fraction", f.train_fraction);
    f.opts["val_fraction"] = c->add_option("--val-fraction", f.val_fraction);
    f.opts["test_fraction"] = c->add_option("--test-fraction", f.test_fraction);
}

int cmd_import(ImportFlags &f, std::ostream &out)
{
    RunConfig cfg(json{{"seed", nullptr},
                       {"out", nullptr},
                       {"coords", nullptr},
                       {"beams", nullptr},
                       {"lidar", nullptr},
                       {"tx", 32},
                       {"rx", 8},
                       {"train_fraction", 0.8},
                       {"val_fraction", 0.1},
                       {"test_fraction", 0.1}});
    cfg.load_file(f.config);
    for (const char *k : {"coords", "beams", "lidar", "out"}) {
        const std::string key = k;
        const std::string &v = key == "coords" ? f.coords : key == "beams" ? f.beams : key == "lidar" ? f.lidar : f.out;
        cfg.flag(f.opts[key], key, v);
    }
    cfg.flag(f.opts["seed"], "seed", f.seed);
    cfg.flag(f.opts["tx"], "tx", f.tx);
    cfg.flag(f.opts["rx"], "rx", f.rx);
    cfg.flag(f.opts["train_fraction"], "train_fraction", f.train_fraction);
    cfg.flag(f.opts["val_fraction"], "val_fraction", f.val_fraction);
    cfg.flag(f.opts["test_fraction"], "test_fraction", f.test_fraction);
    cfg.resolve_seed();
    for (const char *k : {"coords", "beams", "out"})
        if (cfg.raw()[k].is_null())
            throw UsageError(std::string("import: --") + k + " is required");

    RaymobtimeImportOptions opt;
    opt.tx_elements = static_cast<std::size_t>(cfg.get<long long>("tx"));
    opt.rx_elements = static_cast<std::size_t>(cfg.get<long long>("rx"));
    std::optional<fs::path> lidar;
    if (!cfg.raw()["lidar"].is_null())
        lidar = cfg.get<std::string>("lidar");
    const SplitSpec spec = split_from(cfg);
    const fs::path dir = cfg.get<std::string>("out");
    const Dataset ds = import_raymobtime(cfg.get<std::string>("coords"), cfg.get<std::string>("beams"), lidar, opt);
    write_splits(split(ds, spec), dir, out);
    write_resolved(dir, cfg);
    return kOk;
}

// ---- train ----

struct TrainFlags {
    std::string config, model, data, ckpt, pnf = "aggregated";
    std::uint64_t seed = 0;
    long long epochs = 20, batch = 16, embedding = 64;
    double lr = 0.01, momentum = 0.9;
    bool context = false;
    std::map<std::string, CLI::Option *> opts;
};

void add_train(CLI::App &app, TrainFlags &f)
{
    auto *c = app.add_subcommand("train", "Train a model (prerequisite models are trained when absent)");
    c->add_option("--config", f.config, "JSON config file");
    f.opts["model"] = c->add_option("--model", f.model, "Model to train")->check(CLI::IsMember(kModelNames));
    f.opts["data"] = c->add_option("--data", f.data, "Dataset directory written by gen or import");
    f.opts["ckpt"] = c->add_option("--ckpt", f.ckpt, "Checkpoint directory (default <data>/models)");
    f.opts["seed"] = c->add_option("--seed", f.seed, "Seed (falls back to BEAMCRAFT_SEED)");
    f.opts["epochs"] = c->add_option("--epochs", f.epochs)->check(CLI::PositiveNumber);
    f.opts["batch"] = c->add_option("--batch", f.batch)->check(CLI::PositiveNumber);
    f.opts["lr"] = c->add_option("--lr", f.lr, "Learning rate");
    f.opts["momentum"] = c->add_option("--momentum", f.momentum);
    f.opts["embedding"] = c->add_option("--embedding", f.embedding, "Embedding width of every extractor")
                              ->check(CLI::PositiveNumber);
    f.opts["pnf"] = c->add_option("--pnf", f.pnf, "Penultimate fusion feeding deep fusion")
                        ->check(CLI::IsMember({"aggregated", "incremental"}));
    f.opts["context"] = c->add_flag("--context", f.context, "Coordinate model reads the context vector");
}

struct Trainer {
    RunConfig cfg;
    fs::path data, ckpt;
    Dataset train, val;
    TrainConfig tc;
    FusionConfig fc;
    std::ostream &out;

    fs::path path_of(const std::string &name) const { return ckpt / (name + ".ckpt"); }

    void save(const std::string &name, const AnyModel &m, const TrainLog &log, double val_top1)
    {
        save_model(path_of(name), m);
        write_text(ckpt / (name + ".log.csv"), format_log_csv(log));
        out << "trained " << name << ": val top-1 " << format_double(val_top1) << "% -> " << path_of(name).string()
            << '\n';
    }

    template <typename M>
    std::optional<M> existing(const std::string &name)
    {
        if (!fs::exists(path_of(name)))
            return std::nullopt;
        auto any = load_model(path_of(name));
        auto *m = std::get_if<M>(&any);
        if (!m)
            throw FormatError(path_of(name).string() + " does not hold a " + name + " model");
        out << "using existing " << path_of(name).string() << '\n';
        return std::move(*m);
    }

    UnimodalModel unimodal(Modality m, bool force)
    {
        const auto name = to_string(m);
        if (!force)
            if (auto u = existing<UnimodalModel>(name))
                return *u;
        auto r = train_unimodal(m, train, val, tc, fc);
        save(name, r.model, r.log, r.val_top1);
        return r.model;
    }

    std::array<UnimodalModel, 3> all_unimodal()
    {
        return {unimodal(Modality::lidar, false), unimodal(Modality::image, false),
                unimodal(Modality::coordinate, false)};
    }

    AggregatedFusionModel aggregated(bool force)
    {
        if (!force)
            if (auto m = existing<AggregatedFusionModel>("aggregated"))
                return *m;
        auto r = train_aggregated(all_unimodal(), train, val, tc, fc);
        save("aggregated", r.model, r.log, r.val_top1);
        return r.model;
    }

    IncrementalFusionModel incremental(bool force)
    {
        if (!force)
            if (auto m = existing<IncrementalFusionModel>("incremental"))
                return *m;
        auto r = train_incremental(all_unimodal(), train, val, tc, fc);
        save("incremental", r.model, r.log, r.val_top1);
        return r.model;
    }

    void deep(PnfChoice pnf)
    {
        auto u = all_unimodal();
        std::variant<AggregatedFusionModel, IncrementalFusionModel> first;
        if (pnf == PnfChoice::aggregated)
            first = aggregated(false);
        else
            first = incremental(false);
        auto r = train_deep_fusion(u, first, train, val, tc, fc);
        save("deep", r.model, r.log, r.val_top1);
    }
};

Dataset load_split(const fs::path &data, const std::string &part)
{
    const fs::path dir = data / part;
    if (!fs::is_directory(dir))
        throw std::runtime_error("dataset split not found: " + dir.string());
    return load_dataset(dir);
}

int cmd_train(TrainFlags &f, std::ostream &out)
{
    RunConfig cfg(json{{"seed", nullptr},
                       {"model", nullptr},
                       {"data", nullptr},
                       {"ckpt", nullptr},
                       {"epochs", 20},
                       {"batch", 16},
                       {"lr", 0.01},
                       {"momentum", 0.9},
                       {"embedding", 64},
                       {"pnf", "aggregated"},
                       {"context", false},
                       {"tx", nullptr},
                       {"rx", nullptr}});
    cfg.load_file(f.config);
    cfg.flag(f.opts["seed"], "seed", f.seed);
    cfg.flag(f.opts["model"], "model", f.model);
    cfg.flag(f.opts["data"], "data", f.data);
    cfg.flag(f.opts["ckpt"], "ckpt", f.ckpt);
    cfg.flag(f.opts["epochs"], "epochs", f.epochs);
    cfg.flag(f.opts["batch"], "batch", f.batch);
    cfg.flag(f.opts["lr"], "lr", f.lr);
    cfg.flag(f.opts["momentum"], "momentum", f.momentum);
    cfg.flag(f.opts["embedding"], "embedding", f.embedding);
    cfg.flag(f.opts["pnf"], "pnf", f.pnf);
    cfg.flag(f.opts["context"], "context", f.context);
    cfg.resolve_seed();
    if (cfg.raw()["model"].is_null())
        throw UsageError("train: --model is required");
    if (cfg.raw()["data"].is_null())
        throw UsageError("train: --data is required");
    const auto model = cfg.get<std::string>("model");
    if (std::find(kModelNames.begin(), kModelNames.end(), model) == kModelNames.end())
        throw UsageError("train: unknown model '" + model + "'");

    Trainer t{cfg, cfg.get<std::string>("data"), {}, {}, {}, {}, {}, out};
    t.ckpt = cfg.raw()["ckpt"].is_null() ? t.data / "models" : fs::path(cfg.get<std::string>("ckpt"));
    cfg.raw()["ckpt"] = t.ckpt.string();
    t.tc.seed = t.fc.seed = cfg.get<std::uint64_t>("seed");
    const auto epochs = cfg.get<long long>("epochs"), batch = cfg.get<long long>("batch"),
               emb = cfg.get<long long>("embedding");
    if (epochs <= 0 || batch <= 0 || emb <= 0)
        throw UsageError("train: epochs, batch and embedding must be positive");
    t.tc.epochs = static_cast<std::size_t>(epochs);
    t.tc.batch_size = static_cast<std::size_t>(batch);
    t.tc.learning_rate = cfg.get<double>("lr");
    t.tc.momentum = cfg.get<double>("momentum");
    try {
        t.tc.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    t.fc.lidar_embedding = t.fc.image_embedding = t.fc.coordinate_embedding = static_cast<std::size_t>(emb);
    t.fc.coordinate_uses_context = cfg.get<bool>("context");
    PnfChoice pnf;
    try {
        pnf = pnf_from_string(cfg.get<std::string>("pnf"));
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }

    if (!fs::is_directory(t.data))
        throw std::runtime_error("dataset directory not found: " + t.data.string());
    t.train = load_split(t.data, "train");
    t.val = load_split(t.data, "val");
    for (const char *k : {"tx", "rx"}) {
        const std::size_t have = t.train.codebook_dims[std::string(k) == "tx" ? 0 : 1];
        if (!cfg.raw()[k].is_null() && cfg.get<std::size_t>(k) != have)
            throw ShapeError(std::string("train: config ") + k + " = " + cfg.raw()[k].dump() + " but dataset has " +
                             std::to_string(have));
        cfg.raw()[k] = have;
    }
    t.cfg = cfg;
    fs::create_directories(t.ckpt);

    if (model == "aggregated")
        t.aggregated(true);
    else if (model == "incremental")
        t.incremental(true);
    else if (model == "deep")
        t.deep(pnf);
    else
        t.unimodal(modality_from_string(model), true);
    write_resolved(t.ckpt, cfg);
    return kOk;
}

// ---- eval ----

struct EvalFlags {
    std::string config, models, data, ckpt, out, k;
    std::uint64_t seed = 0;
    double tp = 20.0, tssb = 5.0;
    std::map<std::string, CLI::Option *> opts;
};

void add_eval(CLI::App &app, EvalFlags &f)
{
    auto *c = app.add_subcommand("eval", "Evaluate checkpoints on the test split");
    c->add_option("--config", f.config, "JSON config file");
    f.opts["models"] = c->add_option("--models", f.models, "Comma-separated model names");
    f.opts["data"] = c->add_option("--data", f.data, "Dataset directory");
    f.opts["ckpt"] = c->add_option("--ckpt", f.ckpt, "Checkpoint directory (default <data>/models)");
    f.opts["out"] = c->add_option("--out", f.out, "Report directory (default: checkpoint directory)");
    f.opts["k"] = c->add_option("--k", f.k, "Comma-separated K values");
    f.opts["seed"] = c->add_option("--seed", f.seed);
    f.opts["tp"] = c->add_option("--tp", f.tp, "SS burst period, ms");
    f.opts["tssb"] = c->add_option("--tssb", f.tssb, "SS burst duration, ms");
}

int cmd_eval(EvalFlags &f, std::ostream &out)
{
    RunConfig cfg(json{{"seed", nullptr},
                       {"models", "coordinate,image,lidar,aggregated,incremental,deep"},
                       {"data", nullptr},
                       {"ckpt", nullptr},
                       {"out", nullptr},
                       {"k", "1,5,10"},
                       {"tp", 20.0},
                       {"tssb", 5.0},
                       {"tx", nullptr},
                       {"rx", nullptr}});
    cfg.load_file(f.config);
    cfg.flag(f.opts["seed"], "seed", f.seed);
    cfg.flag(f.opts["models"], "models", f.models);
    cfg.flag(f.opts["data"], "data", f.data);
    cfg.flag(f.opts["ckpt"], "ckpt", f.ckpt);
    cfg.flag(f.opts["out"], "out", f.out);
    cfg.flag(f.opts["k"], "k", f.k);
    cfg.flag(f.opts["tp"], "tp", f.tp);
    cfg.flag(f.opts["tssb"], "tssb", f.tssb);
    cfg.resolve_seed();
    if (cfg.raw()["data"].is_null())
        throw UsageError("eval: --data is required");
    const auto ks = parse_positive_list(cfg.raw()["k"], "k");
    const auto names = cfg.raw()["models"].is_array() ? cfg.get<std::vector<std::string>>("models")
                                                      : split_list(cfg.get<std::string>("models"));
    if (names.empty())
        throw UsageError("eval: no models given");
    SweepTimingConfig timing;
    timing.period_ms = cfg.get<double>("tp");
    timing.burst_ms = cfg.get<double>("tssb");
    try {
        timing.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }

    const fs::path data = cfg.get<std::string>("data");
    const fs::path ckpt = cfg.raw()["ckpt"].is_null() ? data / "models" : fs::path(cfg.get<std::string>("ckpt"));
    const fs::path dir = cfg.raw()["out"].is_null() ? ckpt : fs::path(cfg.get<std::string>("out"));
    cfg.raw()["ckpt"] = ckpt.string();
    cfg.raw()["out"] = dir.string();

    if (!fs::is_directory(data))
        throw std::runtime_error("dataset directory not found: " + data.string());
    const Dataset test = load_split(data, "test");
    cfg.raw()["tx"] = test.codebook_dims[0];
    cfg.raw()["rx"] = test.codebook_dims[1];

    std::vector<std::shared_ptr<AnyModel>> loaded;
    std::vector<std::pair<std::string, Scorer>> scorers;
    for (const auto &name : names) {
        const fs::path p = ckpt / (name + ".ckpt");
        if (!fs::exists(p))
            throw std::runtime_error("missing checkpoint for model '" + name + "': " + p.string());
        auto m = std::make_shared<AnyModel>(load_model(p));
        loaded.push_back(m);
        scorers.emplace_back(name, [m](const SceneSample &s) { return predict_scores(*m, s); });
    }
    const EvalReport report = evaluate(scorers, test, ks, timing);
    write_text(dir / "report.json", report.to_json().dump(2) + "\n");
    write_text(dir / "report.csv", report.to_csv());
    write_resolved(dir, cfg);
    out << report.to_table();
    return kOk;
}

// ---- sweep-time ----

struct SweepFlags {
    std::vector<long long> pairs;
    double tp = 20.0, tssb = 5.0;
    long long blocks = 32;
    std::string out = "sweep_time.csv";
};

void add_sweep(CLI::App &app, SweepFlags &f)
{
    auto *c = app.add_subcommand("sweep-time", "Beam sweep time for candidate-set sizes");
    c->alias("sweep_time");
    c->add_option("--pairs", f.pairs, "Comma-separated candidate pair counts")
        ->required()
        ->delimiter(',')
        ->check(CLI::PositiveNumber);
    c->add_option("--tp", f.tp, "SS burst period, ms")->check(CLI::PositiveNumber);
    c->add_option("--tssb", f.tssb, "SS burst duration, ms")->check(CLI::NonNegativeNumber);
    c->add_option("--blocks", f.blocks, "SS blocks per burst")->check(CLI::PositiveNumber);
    c->add_option("--out", f.out, "CSV output file");
}

int cmd_sweep(const SweepFlags &f, std::ostream &out)
{
    SweepTimingConfig timing;
    timing.period_ms = f.tp;
    timing.burst_ms = f.tssb;
    timing.blocks_per_burst = static_cast<std::size_t>(f.blocks);
    try {
        timing.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    std::ostringstream csv;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%10s %10s\n", "pairs", "T_bs ms");
    out << buf;
    for (auto p : f.pairs) {
        const double t = sweep_time_ms(static_cast<std::size_t>(p), timing);
        csv << p << ',' << format_double(t) << '\n';
        std::snprintf(buf, sizeof buf, "%10lld %10s\n", p, format_double(t).c_str());
        out << buf;
    }
    write_text(f.out, csv.str());
    return kOk;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err)
{
    CLI::App app{"beamcraft: mmWave beam selection from multimodal vehicular sensing", "beamcraft"};
    app.require_subcommand(1);
    GenFlags gen;
    ImportFlags imp;
    TrainFlags train;
    EvalFlags eval;
    SweepFlags sweep;
    add_gen(app, gen);
    add_import(app, imp);
    add_train(app, train);
    add_eval(app, eval);
    add_sweep(app, sweep);

    std::vector<const char *> argv{"beamcraft"};
    for (const auto &a : args)
        argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsageError;
    }

    try {
        const auto *sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        if (name == "gen")
            return cmd_gen(gen, out);
        if (name == "import")
            return cmd_import(imp, out);
        if (name == "train")
            return cmd_train(train, out);
        if (name == "eval")
            return cmd_eval(eval, out);
        return cmd_sweep(sweep, out);
    } catch (const UsageError &e) {
        err << "usage error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
}

} // namespace beamcraft::cli
