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

#include "beamcraft/fusion.hpp"
#include "beamcraft/random.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace beamcraft {

namespace {

constexpr std::size_t modality_slot(Modality m) { return static_cast<std::size_t>(m); }

Tensor<float> as_tensor(const Eigen::VectorXd &v)
{
    return Tensor<float>({static_cast<std::size_t>(v.size())}, v.cast<float>());
}

Eigen::VectorXd concat(std::initializer_list<const Eigen::VectorXd *> parts)
{
    Eigen::Index n = 0;
    for (const auto *p : parts)
        n += p->size();
    Eigen::VectorXd out(n);
    Eigen::Index at = 0;
    for (const auto *p : parts) {
        out.segment(at, p->size()) = *p;
        at += p->size();
    }
    return out;
}

Tensor<float> standardized(const UnimodalModel &model, Tensor<float> x)
{
    if (model.input_mean.size() == 0)
        return x;
    if (static_cast<std::size_t>(model.input_mean.size()) != x.size())
        throw ShapeError(to_string(model.modality) + " input: expected " + std::to_string(model.input_mean.size()) +
                         " features, got " + std::to_string(x.size()));
    x.values = ((x.values.cast<double>() - model.input_mean).cwiseProduct(model.input_scale)).cast<float>();
    return x;
}

Tensor<float> model_input(const UnimodalModel &model, const SceneSample &sample)
{
    return standardized(model, modality_input(sample, model.modality, model.uses_context));
}

Eigen::VectorXd output_of(const ForwardCache<float> &cache) { return cache.output().values.cast<double>(); }

void check_pairs(std::size_t expected, std::size_t got, const std::string &what)
{
    if (expected != got)
        throw ShapeError(what + ": model predicts " + std::to_string(got) + " beam pairs, dataset has " +
                         std::to_string(expected));
}

void check_embedding(const UnimodalModel &model, const FusionConfig &fusion, const std::string &what)
{
    if (model.embedding_size() != fusion.embedding(model.modality))
        throw ShapeError(what + ": " + to_string(model.modality) + " embedding has width " +
                         std::to_string(model.embedding_size()) + ", expected " +
                         std::to_string(fusion.embedding(model.modality)));
}

void require_nonempty(const Dataset &ds, const std::string &what)
{
    if (ds.samples.empty())
        throw TrainingError(what + " split is empty");
}

// One optimiser per trainable network; gradients are averaged over the batch.
class BatchOptimizer {
public:
    BatchOptimizer(std::vector<Net *> nets, const TrainConfig &cfg) : nets_(std::move(nets)), cfg_(cfg)
    {
        for (auto *n : nets_)
            accum_.push_back(zero_gradients(*n));
        states_.resize(nets_.size());
    }

    Gradients &grads(std::size_t i) { return accum_[i]; }

    void apply(std::size_t batch)
    {
        const double inv = 1.0 / static_cast<double>(batch);
        for (std::size_t i = 0; i < nets_.size(); ++i) {
            for (auto &g : accum_[i])
                g.values *= inv;
            sgd_step(*nets_[i], accum_[i], cfg_, states_[i]);
            for (auto &g : accum_[i])
                g.values.setZero();
        }
    }

private:
    std::vector<Net *> nets_;
    TrainConfig cfg_;
    std::vector<Gradients> accum_;
    std::vector<MomentumState> states_;
};

// step(i) accumulates gradients for training sample i and returns its loss.
template <typename Step>
void run_epochs(std::size_t n, const TrainConfig &cfg, std::uint64_t stream, BatchOptimizer &opt, Step step,
                const std::function<double()> &validate, TrainLog &log)
{
    std::vector<std::size_t> order(n);
    const std::size_t offset = log.size();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(derive_seed(cfg.seed, stream), epoch));
        shuffle(order, rng);
        double loss = 0.0;
        for (std::size_t b = 0; b < n; b += cfg.batch_size) {
            const std::size_t e = std::min(n, b + cfg.batch_size);
            for (std::size_t i = b; i < e; ++i)
                loss += step(order[i]);
            opt.apply(e - b);
        }
        log.push_back({offset + epoch + 1, loss / static_cast<double>(n), validate()});
    }
}

double backprop_head(const Net &head, const Eigen::VectorXd &input, std::size_t label, Gradients *accum,
                     Eigen::VectorXd *input_grad)
{
    const auto cache = forward_cached(head, as_tensor(input));
    const Eigen::VectorXd p = output_of(cache);
    const double loss = loss_ce(p, label);
    if (accum)
        backward_accumulate(head, cache, loss_ce_gradient(p, label), *accum, input_grad);
    return loss;
}

std::vector<Tensor<float>> inputs_for(const UnimodalModel &model, const Dataset &ds)
{
    std::vector<Tensor<float>> out;
    out.reserve(ds.size());
    for (const auto &s : ds.samples)
        out.push_back(model_input(model, s));
    return out;
}

Net make_head(std::size_t in, std::size_t hidden, std::size_t pairs, std::uint64_t seed)
{
    return make_network<float>({in}, {LayerSpec::dense(hidden), LayerSpec::relu(), LayerSpec::dense(pairs),
                                      LayerSpec::softmax()},
                               seed);
}

// Output of the stage-1 head's hidden relu layer.
Eigen::VectorXd stage1_embedding(const IncrementalFusionModel &m, const Eigen::VectorXd &z_best,
                                 const Eigen::VectorXd &z_second)
{
    return output_of(forward_cached(m.stage1_head, as_tensor(concat({&z_best, &z_second})), 2));
}

void set_frozen(UnimodalModel &m, bool frozen)
{
    m.extractor.set_frozen(frozen);
    m.head.set_frozen(frozen);
}

} // namespace

std::string to_string(Modality m)
{
    switch (m) {
    case Modality::lidar: return "lidar";
    case Modality::image: return "image";
    case Modality::coordinate: return "coordinate";
    }
    return "?";
}

Modality modality_from_string(const std::string &name)
{
    for (auto m : kModalities)
        if (to_string(m) == name)
            return m;
    throw std::invalid_argument("unknown modality '" + name + "'");
}

std::string to_string(PnfChoice c) { return c == PnfChoice::aggregated ? "aggregated" : "incremental"; }

PnfChoice pnf_from_string(const std::string &name)
{
    if (name == "aggregated")
        return PnfChoice::aggregated;
    if (name == "incremental")
        return PnfChoice::incremental;
    throw std::invalid_argument("unknown penultimate fusion '" + name + "'");
}

std::size_t FusionConfig::embedding(Modality m) const
{
    switch (m) {
    case Modality::lidar: return lidar_embedding;
    case Modality::image: return image_embedding;
    case Modality::coordinate: return coordinate_embedding;
    }
    return 0;
}

std::string model_name(const AnyModel &model)
{
    struct {
        std::string operator()(const UnimodalModel &m) const { return to_string(m.modality); }
        std::string operator()(const AggregatedFusionModel &) const { return "aggregated"; }
        std::string operator()(const IncrementalFusionModel &) const { return "incremental"; }
        std::string operator()(const DeepFusionModel &) const { return "deep"; }
    } v;
    return std::visit(v, model);
}

Tensor<float> modality_input(const SceneSample &sample, Modality m, bool coordinate_uses_context)
{
    switch (m) {
    case Modality::lidar: {
        const auto &g = sample.lidar;
        Vector<float> v(static_cast<Eigen::Index>(g.cells.size()));
        for (std::size_t i = 0; i < g.cells.size(); ++i)
            v[static_cast<Eigen::Index>(i)] = static_cast<float>(g.cells[i]) / 3.0f;
        return Tensor<float>({1, g.dims[0], g.dims[1], g.dims[2]}, std::move(v));
    }
    case Modality::image: {
        const auto &p = sample.image.pixels;
        Vector<float> v = Eigen::Map<const Vector<float>>(p.data(), p.size());
        return Tensor<float>({1, static_cast<std::size_t>(p.rows()), static_cast<std::size_t>(p.cols())}, std::move(v));
    }
    case Modality::coordinate: {
        if (coordinate_uses_context) {
            const auto &c = sample.context.values;
            Vector<float> v(static_cast<Eigen::Index>(c.size()));
            for (std::size_t i = 0; i < c.size(); ++i)
                v[static_cast<Eigen::Index>(i)] = static_cast<float>(c[i]);
            return Tensor<float>({c.size()}, std::move(v));
        }
        Vector<float> v(2);
        v << static_cast<float>(sample.gps.latitude_like), static_cast<float>(sample.gps.longitude_like);
        return Tensor<float>({2}, std::move(v));
    }
    }
    throw std::invalid_argument("modality_input: bad modality");
}

Shape modality_shape(const SceneSample &sample, Modality m, bool coordinate_uses_context)
{
    return modality_input(sample, m, coordinate_uses_context).shape;
}

UnimodalModel make_unimodal(Modality m, const Shape &input_shape, std::size_t pairs, const FusionConfig &cfg)
{
    if (pairs == 0)
        throw ShapeError("make_unimodal: zero beam pairs");
    const std::size_t d = cfg.embedding(m);
    if (d == 0)
        throw ShapeError("make_unimodal: zero embedding width for " + to_string(m));
    std::vector<LayerSpec> specs;
    switch (m) {
    case Modality::coordinate:
        specs = {LayerSpec::dense(64), LayerSpec::relu(), LayerSpec::dense(d)};
        break;
    case Modality::image:
        specs = {LayerSpec::conv2d(8, 3, 2), LayerSpec::relu(), LayerSpec::conv2d(16, 3, 2), LayerSpec::relu(),
                 LayerSpec::flatten(), LayerSpec::dense(d)};
        break;
    case Modality::lidar:
        specs = {LayerSpec::conv3d(8, 3, 2), LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(d)};
        break;
    }
    UnimodalModel out;
    out.modality = m;
    out.uses_context = m == Modality::coordinate && cfg.coordinate_uses_context;
    out.extractor = make_network<float>(input_shape, specs, derive_seed(cfg.seed, 10 + modality_slot(m)));
    out.head = make_network<float>({d}, {LayerSpec::dense(pairs), LayerSpec::softmax()},
                                   derive_seed(cfg.seed, 20 + modality_slot(m)));
    return out;
}

Eigen::VectorXd extract_embedding(const UnimodalModel &model, const Tensor<float> &raw_input)
{
    return forward(model.extractor, standardized(model, raw_input)).values.cast<double>();
}

Eigen::VectorXd extract_embedding(const UnimodalModel &model, const SceneSample &sample)
{
    return forward(model.extractor, model_input(model, sample)).values.cast<double>();
}

Eigen::VectorXd predict_scores(const UnimodalModel &model, const SceneSample &sample)
{
    return forward(model.head, as_tensor(extract_embedding(model, sample))).values.cast<double>();
}

Eigen::VectorXd predict_scores(const AggregatedFusionModel &model, const SceneSample &sample)
{
    const auto zl = extract_embedding(model.unimodal[0], sample);
    const auto zi = extract_embedding(model.unimodal[1], sample);
    const auto zc = extract_embedding(model.unimodal[2], sample);
    return forward(model.fusion_head, as_tensor(concat({&zl, &zi, &zc}))).values.cast<double>();
}

Eigen::VectorXd predict_scores(const IncrementalFusionModel &model, const SceneSample &sample)
{
    const auto zb = extract_embedding(model.ranked(0), sample);
    const auto zs = extract_embedding(model.ranked(1), sample);
    const auto zt = extract_embedding(model.ranked(2), sample);
    const auto e1 = stage1_embedding(model, zb, zs);
    return forward(model.stage2_head, as_tensor(concat({&e1, &zt}))).values.cast<double>();
}

Eigen::VectorXd deep_fusion_input(const DeepFusionModel &model, const SceneSample &sample)
{
    const auto sl = predict_scores(model.unimodal[0], sample);
    const auto si = predict_scores(model.unimodal[1], sample);
    const auto sc = predict_scores(model.unimodal[2], sample);
    const auto sp = std::visit([&](const auto &m) { return predict_scores(m, sample); }, model.pnf);
    return concat({&sl, &si, &sc, &sp});
}

Eigen::VectorXd predict_scores(const DeepFusionModel &model, const SceneSample &sample)
{
    return forward(model.second_level, as_tensor(deep_fusion_input(model, sample))).values.cast<double>();
}

Eigen::VectorXd predict_scores(const AnyModel &model, const SceneSample &sample)
{
    return std::visit([&](const auto &m) { return predict_scores(m, sample); }, model);
}

double top1_percent(const Scorer &scorer, const Dataset &ds)
{
    if (ds.samples.empty())
        return 0.0;
    std::size_t hits = 0;
    for (const auto &s : ds.samples)
        hits += in_top_k(scorer(s), s.label, 1) ? 1 : 0;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(ds.size());
}

UnimodalResult train_unimodal(UnimodalModel model, const Dataset &train, const Dataset &val, const TrainConfig &cfg)
{
    cfg.validate();
    require_nonempty(train, "training");
    require_nonempty(val, "validation");
    check_pairs(train.pair_count(), model.pair_count(), to_string(model.modality));

    if (model.modality == Modality::coordinate) {
        const auto first = modality_input(train.samples.front(), model.modality, model.uses_context);
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(first.size()));
        Eigen::VectorXd sq = sum;
        for (const auto &s : train.samples) {
            const Eigen::VectorXd x = modality_input(s, model.modality, model.uses_context).values.cast<double>();
            if (x.size() != sum.size())
                throw ShapeError("coordinate input length varies across samples");
            sum += x;
            sq += x.cwiseAbs2();
        }
        const double n = static_cast<double>(train.size());
        model.input_mean = sum / n;
        model.input_scale.resize(sum.size());
        for (Eigen::Index i = 0; i < sum.size(); ++i) {
            const double var = std::max(0.0, sq[i] / n - model.input_mean[i] * model.input_mean[i]);
            model.input_scale[i] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
        }
    }

    const auto inputs = inputs_for(model, train);
    if (inputs.front().shape != model.extractor.input_shape)
        throw ShapeError(to_string(model.modality) + " extractor expects " + shape_string(model.extractor.input_shape) +
                         ", dataset provides " + shape_string(inputs.front().shape));

    BatchOptimizer opt({&model.extractor, &model.head}, cfg);
    auto step = [&](std::size_t i) {
        const auto cache = forward_cached(model.extractor, inputs[i]);
        Eigen::VectorXd dz;
        const double loss = backprop_head(model.head, output_of(cache), train.samples[i].label, &opt.grads(1), &dz);
        backward_accumulate(model.extractor, cache, dz, opt.grads(0));
        return loss;
    };
    auto validate = [&] { return top1_percent([&](const SceneSample &s) { return predict_scores(model, s); }, val); };

    UnimodalResult out;
    run_epochs(train.size(), cfg, 100 + modality_slot(model.modality), opt, step, validate, out.log);
    out.val_top1 = validate();
    model.val_top1 = out.val_top1;
    out.model = std::move(model);
    return out;
}

UnimodalResult train_unimodal(Modality m, const Dataset &train, const Dataset &val, const TrainConfig &cfg,
                              const FusionConfig &fusion)
{
    require_nonempty(train, "training");
    const bool ctx = m == Modality::coordinate && fusion.coordinate_uses_context;
    return train_unimodal(make_unimodal(m, modality_shape(train.samples.front(), m, ctx), train.pair_count(), fusion),
                          train, val, cfg);
}

AggregatedResult train_aggregated(const std::array<UnimodalModel, 3> &unimodal, const Dataset &train,
                                  const Dataset &val, const TrainConfig &cfg, const FusionConfig &fusion)
{
    cfg.validate();
    require_nonempty(train, "training");
    require_nonempty(val, "validation");
    AggregatedFusionModel model;
    model.unimodal = unimodal;
    std::size_t width = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        if (model.unimodal[k].modality != kModalities[k])
            throw ShapeError("aggregated fusion: unimodal slot " + std::to_string(k) + " holds " +
                             to_string(model.unimodal[k].modality));
        check_pairs(train.pair_count(), model.unimodal[k].pair_count(), to_string(kModalities[k]));
        check_embedding(model.unimodal[k], fusion, "aggregated fusion");
        set_frozen(model.unimodal[k], false);
        width += model.unimodal[k].embedding_size();
    }
    model.fusion_head = make_head(width, fusion.fusion_hidden, train.pair_count(), derive_seed(fusion.seed, 30));

    std::array<std::vector<Tensor<float>>, 3> inputs;
    for (std::size_t k = 0; k < 3; ++k)
        inputs[k] = inputs_for(model.unimodal[k], train);

    BatchOptimizer opt({&model.unimodal[0].extractor, &model.unimodal[1].extractor, &model.unimodal[2].extractor,
                        &model.fusion_head},
                       cfg);
    auto step = [&](std::size_t i) {
        std::array<ForwardCache<float>, 3> caches;
        std::array<Eigen::VectorXd, 3> z;
        for (std::size_t k = 0; k < 3; ++k) {
            caches[k] = forward_cached(model.unimodal[k].extractor, inputs[k][i]);
            z[k] = output_of(caches[k]);
        }
        Eigen::VectorXd dz;
        const double loss =
            backprop_head(model.fusion_head, concat({&z[0], &z[1], &z[2]}), train.samples[i].label, &opt.grads(3), &dz);
        Eigen::Index at = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            backward_accumulate(model.unimodal[k].extractor, caches[k], dz.segment(at, z[k].size()).eval(),
                                opt.grads(k));
            at += z[k].size();
        }
        return loss;
    };
    auto validate = [&] { return top1_percent([&](const SceneSample &s) { return predict_scores(model, s); }, val); };

    AggregatedResult out;
    run_epochs(train.size(), cfg, 200, opt, step, validate, out.log);
    out.val_top1 = validate();
    out.model = std::move(model);
    return out;
}

std::array<Modality, 3> rank_modalities(const std::array<std::optional<double>, 3> &val_top1)
{
    for (std::size_t k = 0; k < 3; ++k)
        if (!val_top1[k])
            throw TrainingError("incremental fusion: no recorded validation top-1 for " + to_string(kModalities[k]));
    std::array<Modality, 3> order = kModalities;
    std::stable_sort(order.begin(), order.end(), [&](Modality a, Modality b) {
        return *val_top1[modality_slot(a)] > *val_top1[modality_slot(b)];
    });
    return order;
}

IncrementalResult train_incremental(const std::array<UnimodalModel, 3> &unimodal, const Dataset &train,
                                    const Dataset &val, const TrainConfig &cfg, const FusionConfig &fusion)
{
    cfg.validate();
    require_nonempty(train, "training");
    require_nonempty(val, "validation");
    IncrementalFusionModel model;
    model.unimodal = unimodal;
    for (std::size_t k = 0; k < 3; ++k) {
        if (model.unimodal[k].modality != kModalities[k])
            throw ShapeError("incremental fusion: unimodal slot " + std::to_string(k) + " holds " +
                             to_string(model.unimodal[k].modality));
        check_pairs(train.pair_count(), model.unimodal[k].pair_count(), to_string(kModalities[k]));
        check_embedding(model.unimodal[k], fusion, "incremental fusion");
    }
    model.ranking = rank_modalities({unimodal[0].val_top1, unimodal[1].val_top1, unimodal[2].val_top1});
    auto &best = model.unimodal[modality_slot(model.ranking[0])];
    auto &second = model.unimodal[modality_slot(model.ranking[1])];
    auto &third = model.unimodal[modality_slot(model.ranking[2])];
    const std::size_t pairs = train.pair_count();

    IncrementalResult out;
    auto validate = [&] { return top1_percent([&](const SceneSample &s) { return predict_scores(model, s); }, val); };

    // Stage 1: best frozen, second extractor and stage-1 head trained.
    set_frozen(best, true);
    set_frozen(second, false);
    set_frozen(third, false);
    model.stage1_head = make_head(best.embedding_size() + second.embedding_size(), fusion.fusion_hidden, pairs,
                                  derive_seed(fusion.seed, 31));
    // Until stage 2 trains, the stage-2 head is a placeholder so validation can run.
    model.stage2_head = make_head(fusion.fusion_hidden + third.embedding_size(), fusion.fusion_hidden, pairs,
                                  derive_seed(fusion.seed, 32));
    {
        std::vector<Eigen::VectorXd> zb;
        for (const auto &s : train.samples)
            zb.push_back(extract_embedding(best, s));
        const auto xs = inputs_for(second, train);
        BatchOptimizer opt({&second.extractor, &model.stage1_head}, cfg);
        auto step = [&](std::size_t i) {
            const auto cache = forward_cached(second.extractor, xs[i]);
            const Eigen::VectorXd zs = output_of(cache);
            Eigen::VectorXd dz;
            const double loss =
                backprop_head(model.stage1_head, concat({&zb[i], &zs}), train.samples[i].label, &opt.grads(1), &dz);
            backward_accumulate(second.extractor, cache, dz.tail(zs.size()).eval(), opt.grads(0));
            return loss;
        };
        auto validate1 = [&] {
            return top1_percent(
                [&](const SceneSample &s) {
                    const auto a = extract_embedding(best, s);
                    const auto b = extract_embedding(second, s);
                    return forward(model.stage1_head, as_tensor(concat({&a, &b}))).values.cast<double>();
                },
                val);
        };
        run_epochs(train.size(), cfg, 300, opt, step, validate1, out.log);
    }

    // Stage 2: everything above frozen, third extractor and stage-2 head trained.
    set_frozen(second, true);
    model.stage1_head.set_frozen(true);
    {
        std::vector<Eigen::VectorXd> e1;
        for (const auto &s : train.samples)
            e1.push_back(stage1_embedding(model, extract_embedding(best, s), extract_embedding(second, s)));
        const auto xt = inputs_for(third, train);
        BatchOptimizer opt({&third.extractor, &model.stage2_head}, cfg);
        auto step = [&](std::size_t i) {
            const auto cache = forward_cached(third.extractor, xt[i]);
            const Eigen::VectorXd zt = output_of(cache);
            Eigen::VectorXd dz;
            const double loss =
                backprop_head(model.stage2_head, concat({&e1[i], &zt}), train.samples[i].label, &opt.grads(1), &dz);
            backward_accumulate(third.extractor, cache, dz.tail(zt.size()).eval(), opt.grads(0));
            return loss;
        };
        run_epochs(train.size(), cfg, 301, opt, step, validate, out.log);
    }
    out.val_top1 = validate();
    out.model = std::move(model);
    return out;
}

DeepResult train_deep_fusion(const std::array<UnimodalModel, 3> &unimodal,
                             const std::variant<AggregatedFusionModel, IncrementalFusionModel> &pnf,
                             const Dataset &train, const Dataset &val, const TrainConfig &cfg,
                             const FusionConfig &fusion)
{
    cfg.validate();
    require_nonempty(train, "training");
    require_nonempty(val, "validation");
    const std::size_t pairs = train.pair_count();
    DeepFusionModel model;
    model.unimodal = unimodal;
    model.pnf = pnf;
    for (std::size_t k = 0; k < 3; ++k) {
        check_pairs(pairs, model.unimodal[k].pair_count(), to_string(model.unimodal[k].modality));
        set_frozen(model.unimodal[k], true);
    }
    std::visit(
        [&](auto &m) {
            using M = std::decay_t<decltype(m)>;
            for (auto &u : m.unimodal)
                set_frozen(u, true);
            if constexpr (std::is_same_v<M, AggregatedFusionModel>) {
                check_pairs(pairs, m.fusion_head.output_shape().front(), "aggregated fusion");
                m.fusion_head.set_frozen(true);
            } else {
                check_pairs(pairs, m.stage2_head.output_shape().front(), "incremental fusion");
                m.stage1_head.set_frozen(true);
                m.stage2_head.set_frozen(true);
            }
        },
        model.pnf);

    std::vector<LayerSpec> specs;
    for (auto w : fusion.deep_hidden) {
        specs.push_back(LayerSpec::dense(w));
        specs.push_back(LayerSpec::relu());
    }
    specs.push_back(LayerSpec::dense(pairs));
    specs.push_back(LayerSpec::softmax());
    model.second_level = make_network<float>({4 * pairs}, specs, derive_seed(fusion.seed, 33));

    // First level is frozen, so its outputs are fixed for the whole run.
    std::vector<Eigen::VectorXd> train_in, val_in;
    for (const auto &s : train.samples)
        train_in.push_back(deep_fusion_input(model, s));
    for (const auto &s : val.samples)
        val_in.push_back(deep_fusion_input(model, s));

    BatchOptimizer opt({&model.second_level}, cfg);
    auto step = [&](std::size_t i) {
        return backprop_head(model.second_level, train_in[i], train.samples[i].label, &opt.grads(0), nullptr);
    };
    auto validate = [&] {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < val.size(); ++i)
            hits += in_top_k(forward(model.second_level, as_tensor(val_in[i])).values.cast<double>(),
                             val.samples[i].label, 1)
                        ? 1
                        : 0;
        return 100.0 * static_cast<double>(hits) / static_cast<double>(val.size());
    };

    DeepResult out;
    run_epochs(train.size(), cfg, 400, opt, step, validate, out.log);
    out.val_top1 = validate();
    out.model = std::move(model);
    return out;
}

bool in_top_k(const Eigen::VectorXd &scores, std::size_t label, std::size_t k)
{
    if (label >= static_cast<std::size_t>(scores.size()))
        throw ShapeError("in_top_k: label " + std::to_string(label) + " outside " + std::to_string(scores.size()) +
                         " scores");
    const double s = scores[static_cast<Eigen::Index>(label)];
    std::size_t ahead = 0;
    for (Eigen::Index j = 0; j < scores.size(); ++j)
        if (scores[j] > s || (scores[j] == s && static_cast<std::size_t>(j) < label))
            ++ahead;
    return ahead < k;
}

EvalReport evaluate(const std::vector<std::pair<std::string, Scorer>> &models, const Dataset &test,
                    const std::vector<std::size_t> &ks, const SweepTimingConfig &timing)
{
    if (test.samples.empty())
        throw EmptyDatasetError("evaluate: empty test set");
    EvalReport report;
    report.ks = ks;
    std::sort(report.ks.begin(), report.ks.end());
    report.ks.erase(std::unique(report.ks.begin(), report.ks.end()), report.ks.end());
    for (auto k : report.ks)
        if (k == 0)
            throw std::invalid_argument("evaluate: K must be positive");
    report.sample_count = test.size();
    for (const auto &[name, scorer] : models) {
        ModelEval m;
        m.name = name;
        std::map<std::size_t, std::size_t> hits;
        for (const auto &s : test.samples) {
            const auto scores = scorer(s);
            for (auto k : report.ks)
                hits[k] += in_top_k(scores, s.label, k) ? 1 : 0;
        }
        for (auto k : report.ks) {
            m.accuracy_percent[k] = 100.0 * static_cast<double>(hits[k]) / static_cast<double>(test.size());
            m.sweep_ms[k] = sweep_time_ms(k, timing);
        }
        report.models.push_back(std::move(m));
    }
    return report;
}

nlohmann::json EvalReport::to_json() const
{
    nlohmann::json models_j = nlohmann::json::object();
    for (const auto &m : models) {
        nlohmann::json acc = nlohmann::json::object(), sweep = nlohmann::json::object();
        for (auto k : ks) {
            acc[std::to_string(k)] = m.accuracy_percent.at(k);
            sweep[std::to_string(k)] = m.sweep_ms.at(k);
        }
        models_j[m.name] = {{"accuracy_percent", acc}, {"sweep_ms", sweep}};
    }
    return {{"ks", ks}, {"sample_count", sample_count}, {"models", models_j}};
}

std::string EvalReport::to_csv() const
{
    std::ostringstream out;
    for (const auto &m : models)
        for (auto k : ks)
            out << m.name << ',' << k << ',' << format_double(m.accuracy_percent.at(k)) << ','
                << format_double(m.sweep_ms.at(k)) << '\n';
    return out.str();
}

std::string EvalReport::to_table() const
{
    std::ostringstream out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-12s", "model");
    out << buf;
    for (auto k : ks) {
        std::snprintf(buf, sizeof buf, " %10s", ("top-" + std::to_string(k)).c_str());
        out << buf;
    }
    out << '\n';
    for (const auto &m : models) {
        std::snprintf(buf, sizeof buf, "%-12s", m.name.c_str());
        out << buf;
        for (auto k : ks) {
            std::snprintf(buf, sizeof buf, " %10.2f", m.accuracy_percent.at(k));
            out << buf;
        }
        out << '\n';
    }
    std::snprintf(buf, sizeof buf, "%-12s", "sweep ms");
    out << buf;
    for (auto k : ks) {
        std::snprintf(buf, sizeof buf, " %10.0f", models.empty() ? 0.0 : models.front().sweep_ms.at(k));
        out << buf;
    }
    out << "\n(" << sample_count << " test samples)\n";
    return out.str();
}

std::string format_log_csv(const TrainLog &log)
{
    std::ostringstream out;
    for (const auto &r : log)
        out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_top1) << '\n';
    return out.str();
}

// ---- checkpoints ----

namespace {

nlohmann::json vec_json(const Eigen::VectorXd &v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd json_vec(const nlohmann::json &j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json describe(const UnimodalModel &m, std::vector<const Net *> &nets)
{
    nets.push_back(&m.extractor);
    nets.push_back(&m.head);
    nlohmann::json j = {{"modality", to_string(m.modality)},
                        {"uses_context", m.uses_context},
                        {"input_mean", vec_json(m.input_mean)},
                        {"input_scale", vec_json(m.input_scale)}};
    j["val_top1"] = m.val_top1 ? nlohmann::json(*m.val_top1) : nlohmann::json(nullptr);
    return j;
}

nlohmann::json describe_all(const std::array<UnimodalModel, 3> &u, std::vector<const Net *> &nets)
{
    auto j = nlohmann::json::array();
    for (const auto &m : u)
        j.push_back(describe(m, nets));
    return j;
}

nlohmann::json describe(const AggregatedFusionModel &m, std::vector<const Net *> &nets)
{
    auto j = nlohmann::json{{"unimodal", describe_all(m.unimodal, nets)}};
    nets.push_back(&m.fusion_head);
    return j;
}

nlohmann::json describe(const IncrementalFusionModel &m, std::vector<const Net *> &nets)
{
    auto ranking = nlohmann::json::array();
    for (auto r : m.ranking)
        ranking.push_back(to_string(r));
    auto j = nlohmann::json{{"ranking", ranking}, {"unimodal", describe_all(m.unimodal, nets)}};
    nets.push_back(&m.stage1_head);
    nets.push_back(&m.stage2_head);
    return j;
}

nlohmann::json describe(const DeepFusionModel &m, std::vector<const Net *> &nets)
{
    auto j = nlohmann::json{{"unimodal", describe_all(m.unimodal, nets)}};
    j["pnf"] = to_string(m.pnf_choice());
    j["pnf_model"] = std::visit([&](const auto &p) { return describe(p, nets); }, m.pnf);
    nets.push_back(&m.second_level);
    return j;
}

class NetReader {
public:
    explicit NetReader(std::istream &in) : in_(in) {}
    Net next()
    {
        if (in_.peek() == std::char_traits<char>::eof())
            throw FormatError("model checkpoint: truncated, missing network");
        return read_network<float>(in_);
    }

private:
    std::istream &in_;
};

UnimodalModel restore_unimodal(const nlohmann::json &j, NetReader &r)
{
    UnimodalModel m;
    m.modality = modality_from_string(j.at("modality").get<std::string>());
    m.uses_context = j.at("uses_context").get<bool>();
    m.input_mean = json_vec(j.at("input_mean"));
    m.input_scale = json_vec(j.at("input_scale"));
    if (!j.at("val_top1").is_null())
        m.val_top1 = j.at("val_top1").get<double>();
    m.extractor = r.next();
    m.head = r.next();
    return m;
}

std::array<UnimodalModel, 3> restore_all(const nlohmann::json &j, NetReader &r)
{
    if (!j.is_array() || j.size() != 3)
        throw FormatError("model checkpoint: expected three unimodal entries");
    return {restore_unimodal(j[0], r), restore_unimodal(j[1], r), restore_unimodal(j[2], r)};
}

AggregatedFusionModel restore_aggregated(const nlohmann::json &j, NetReader &r)
{
    AggregatedFusionModel m;
    m.unimodal = restore_all(j.at("unimodal"), r);
    m.fusion_head = r.next();
    return m;
}

IncrementalFusionModel restore_incremental(const nlohmann::json &j, NetReader &r)
{
    IncrementalFusionModel m;
    const auto &ranking = j.at("ranking");
    if (!ranking.is_array() || ranking.size() != 3)
        throw FormatError("model checkpoint: ranking must list three modalities");
    for (std::size_t i = 0; i < 3; ++i)
        m.ranking[i] = modality_from_string(ranking[i].get<std::string>());
    m.unimodal = restore_all(j.at("unimodal"), r);
    m.stage1_head = r.next();
    m.stage2_head = r.next();
    return m;
}

} // namespace

void save_model(std::ostream &out, const AnyModel &model)
{
    std::vector<const Net *> nets;
    const auto body = std::visit([&](const auto &m) { return describe(m, nets); }, model);
    nlohmann::json header = {{"format", "beamcraft-model"},
                             {"version", "v1"},
                             {"model", model_name(model)},
                             {"network_count", nets.size()},
                             {"components", body}};
    out << header.dump() << '\n';
    for (const auto *n : nets)
        write_network(out, *n);
    if (!out)
        throw std::runtime_error("save_model: write failed");
}

AnyModel load_model(std::istream &in)
{
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("model checkpoint: missing header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("model checkpoint: bad header: ") + e.what());
    }
    if (header.value("format", "") != "beamcraft-model" || header.value("version", "") != "v1")
        throw FormatError("model checkpoint: unsupported format");
    try {
        const auto name = header.at("model").get<std::string>();
        const auto &c = header.at("components");
        NetReader r(in);
        if (name == "aggregated")
            return restore_aggregated(c, r);
        if (name == "incremental")
            return restore_incremental(c, r);
        if (name == "deep") {
            DeepFusionModel m;
            m.unimodal = restore_all(c.at("unimodal"), r);
            if (pnf_from_string(c.at("pnf").get<std::string>()) == PnfChoice::aggregated)
                m.pnf = restore_aggregated(c.at("pnf_model"), r);
            else
                m.pnf = restore_incremental(c.at("pnf_model"), r);
            m.second_level = r.next();
            return m;
        }
        modality_from_string(name);
        return restore_unimodal(c, r);
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("model checkpoint: ") + e.what());
    } catch (const std::invalid_argument &e) {
        throw FormatError(std::string("model checkpoint: ") + e.what());
    }
}

void save_model(const std::filesystem::path &path, const AnyModel &model)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    save_model(out, model);
}

AnyModel load_model(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open model checkpoint " + path.string());
    return load_model(in);
}

} // namespace beamcraft
