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

#include "beamcraft/neural.hpp"

#include "beamcraft/random.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace beamcraft {

namespace {

constexpr double kProbabilityFloor = 1e-12;

std::string layer_name(std::size_t index, LayerKind kind)
{
    return "layer " + std::to_string(index) + " (" + to_string(kind) + ")";
}

// Spatial geometry of a valid convolution; conv2d is treated as depth 1.
struct ConvGeom {
    std::size_t in_ch, depth, height, width;
    std::size_t out_ch, kd, kh, kw, sd, sh, sw;
    std::size_t out_d, out_h, out_w;

    std::size_t kernel_volume() const { return kd * kh * kw; }
};

ConvGeom conv_geom(const LayerSpec &spec, const Shape &in, std::size_t index)
{
    const bool is3d = spec.kind == LayerKind::conv3d;
    const std::size_t rank = is3d ? 4 : 3;
    if (in.size() != rank)
        throw ShapeError(layer_name(index, spec.kind) + ": expects a rank-" + std::to_string(rank) +
                         " input, got " + shape_string(in));
    if (spec.kernel == 0 || spec.stride == 0 || spec.out_channels == 0)
        throw ShapeError(layer_name(index, spec.kind) + ": kernel, stride and channels must be positive");
    ConvGeom g{};
    g.in_ch = in[0];
    g.depth = is3d ? in[1] : 1;
    g.height = in[rank - 2];
    g.width = in[rank - 1];
    g.out_ch = spec.out_channels;
    g.kd = is3d ? spec.kernel : 1;
    g.kh = g.kw = spec.kernel;
    g.sd = is3d ? spec.stride : 1;
    g.sh = g.sw = spec.stride;
    if (g.depth < g.kd || g.height < g.kh || g.width < g.kw)
        throw ShapeError(layer_name(index, spec.kind) + ": input " + shape_string(in) + " smaller than kernel " +
                         std::to_string(spec.kernel));
    g.out_d = (g.depth - g.kd) / g.sd + 1;
    g.out_h = (g.height - g.kh) / g.sh + 1;
    g.out_w = (g.width - g.kw) / g.sw + 1;
    return g;
}

template <typename Scalar>
void conv_forward(const ConvGeom &g, const Vector<Scalar> &w, const Vector<Scalar> &b, const Vector<Scalar> &x,
                  Vector<Scalar> &y)
{
    y.resize(static_cast<Eigen::Index>(g.out_ch * g.out_d * g.out_h * g.out_w));
    const Scalar *xp = x.data();
    const Scalar *wp = w.data();
    std::size_t out = 0;
    for (std::size_t o = 0; o < g.out_ch; ++o)
        for (std::size_t z = 0; z < g.out_d; ++z)
            for (std::size_t r = 0; r < g.out_h; ++r)
                for (std::size_t c = 0; c < g.out_w; ++c, ++out) {
                    double acc = static_cast<double>(b[static_cast<Eigen::Index>(o)]);
                    for (std::size_t ci = 0; ci < g.in_ch; ++ci)
                        for (std::size_t a = 0; a < g.kd; ++a)
                            for (std::size_t bb = 0; bb < g.kh; ++bb) {
                                const Scalar *wrow = wp + (((o * g.in_ch + ci) * g.kd + a) * g.kh + bb) * g.kw;
                                const Scalar *xrow =
                                    xp + ((ci * g.depth + z * g.sd + a) * g.height + r * g.sh + bb) * g.width + c * g.sw;
                                for (std::size_t e = 0; e < g.kw; ++e)
                                    acc += static_cast<double>(wrow[e]) * static_cast<double>(xrow[e]);
                            }
                    y[static_cast<Eigen::Index>(out)] = static_cast<Scalar>(acc);
                }
}

template <typename Scalar>
void conv_backward(const ConvGeom &g, const Vector<Scalar> &w, const Vector<Scalar> &x, const Eigen::VectorXd &gy,
                   double *dw, double *db, Eigen::VectorXd *dx)
{
    if (dx)
        dx->setZero(x.size());
    const Scalar *xp = x.data();
    const Scalar *wp = w.data();
    std::size_t out = 0;
    for (std::size_t o = 0; o < g.out_ch; ++o)
        for (std::size_t z = 0; z < g.out_d; ++z)
            for (std::size_t r = 0; r < g.out_h; ++r)
                for (std::size_t c = 0; c < g.out_w; ++c, ++out) {
                    const double go = gy[static_cast<Eigen::Index>(out)];
                    if (go == 0.0)
                        continue;
                    if (db)
                        db[o] += go;
                    for (std::size_t ci = 0; ci < g.in_ch; ++ci)
                        for (std::size_t a = 0; a < g.kd; ++a)
                            for (std::size_t bb = 0; bb < g.kh; ++bb) {
                                const std::size_t woff = (((o * g.in_ch + ci) * g.kd + a) * g.kh + bb) * g.kw;
                                const std::size_t xoff =
                                    ((ci * g.depth + z * g.sd + a) * g.height + r * g.sh + bb) * g.width + c * g.sw;
                                if (dw)
                                    for (std::size_t e = 0; e < g.kw; ++e)
                                        dw[woff + e] += go * static_cast<double>(xp[xoff + e]);
                                if (dx)
                                    for (std::size_t e = 0; e < g.kw; ++e)
                                        (*dx)[static_cast<Eigen::Index>(xoff + e)] += go * static_cast<double>(wp[woff + e]);
                            }
                }
}

template <typename Scalar>
using RowMajorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename Scalar>
Tensor<Scalar> apply_layer(const Layer<Scalar> &layer, const Tensor<Scalar> &x, std::size_t index)
{
    if (x.shape != layer.input_shape)
        throw ShapeError(layer_name(index, layer.spec.kind) + ": input " + shape_string(x.shape) + " does not match " +
                         shape_string(layer.input_shape));
    Vector<Scalar> y;
    switch (layer.spec.kind) {
    case LayerKind::dense: {
        const auto out = static_cast<Eigen::Index>(layer.spec.out_features);
        const auto in = x.values.size();
        RowMajorMap<Scalar> w(layer.weights.data(), out, in);
        const Eigen::VectorXd xd = x.values.template cast<double>();
        y.resize(out);
        for (Eigen::Index i = 0; i < out; ++i)
            y[i] = static_cast<Scalar>(static_cast<double>(layer.bias[i]) + w.row(i).template cast<double>().dot(xd.transpose()));
        break;
    }
    case LayerKind::conv2d:
    case LayerKind::conv3d:
        conv_forward(conv_geom(layer.spec, layer.input_shape, index), layer.weights, layer.bias, x.values, y);
        break;
    case LayerKind::relu:
        y = x.values.cwiseMax(Scalar(0));
        break;
    case LayerKind::flatten:
        y = x.values;
        break;
    case LayerKind::softmax: {
        const Eigen::VectorXd z = x.values.template cast<double>();
        const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
        y = (e / e.sum()).template cast<Scalar>().cwiseMax(std::numeric_limits<Scalar>::min());
        break;
    }
    }
    return Tensor<Scalar>(layer.output_shape, std::move(y));
}

std::vector<double> glorot(std::size_t count, std::size_t fan_in, std::size_t fan_out, Rng &rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(count);
    for (auto &v : w)
        v = uniform(rng, -limit, limit);
    return w;
}

void put_f32(std::string &out, float v)
{
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>(bits & 0xffu));
        bits >>= 8;
    }
}

float get_f32(const unsigned char *p)
{
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i)
        bits = (bits << 8) | p[i];
    return std::bit_cast<float>(bits);
}

nlohmann::json spec_json(const Layer<float> &l)
{
    return {{"kind", to_string(l.spec.kind)},     {"out_features", l.spec.out_features},
            {"out_channels", l.spec.out_channels}, {"kernel", l.spec.kernel},
            {"stride", l.spec.stride},             {"frozen", l.spec.frozen},
            {"input_shape", l.input_shape},        {"output_shape", l.output_shape},
            {"weights", l.weights.size()},         {"bias", l.bias.size()}};
}

} // namespace

std::size_t shape_size(const Shape &shape)
{
    std::size_t n = 1;
    for (auto d : shape)
        n *= d;
    return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape &shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
        s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

std::string to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::softmax: return "softmax";
    }
    return "dense";
}

LayerKind layer_kind_from_string(const std::string &name)
{
    for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::conv3d, LayerKind::relu, LayerKind::flatten,
                   LayerKind::softmax})
        if (to_string(k) == name)
            return k;
    throw FormatError("unknown layer kind '" + name + "'");
}

template <typename Scalar>
std::size_t Network<Scalar>::parameter_count() const
{
    std::size_t n = 0;
    for (const auto &l : layers)
        n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
}

template <typename Scalar>
void Network<Scalar>::set_frozen(bool frozen)
{
    for (auto &l : layers)
        l.spec.frozen = frozen;
}

template struct Network<float>;
template struct Network<double>;

void TrainConfig::validate() const
{
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("train config: learning_rate must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw std::invalid_argument("train config: momentum must lie in [0, 1)");
    if (batch_size < 1 || epochs < 1)
        throw std::invalid_argument("train config: batch_size and epochs must be positive");
}

template <typename Scalar>
Network<Scalar> make_network(const Shape &input_shape, const std::vector<LayerSpec> &specs, std::uint64_t seed)
{
    if (input_shape.empty() || shape_size(input_shape) == 0)
        throw ShapeError("network input shape must be non-empty with positive extents");
    Network<Scalar> net;
    net.input_shape = input_shape;
    net.rng_seed = seed;
    Shape shape = input_shape;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        Layer<Scalar> layer;
        layer.spec = specs[i];
        layer.input_shape = shape;
        Rng rng(derive_seed(seed, i));
        std::vector<double> w;
        switch (layer.spec.kind) {
        case LayerKind::dense: {
            if (layer.spec.out_features == 0)
                throw ShapeError(layer_name(i, layer.spec.kind) + ": out_features must be positive");
            const std::size_t in = shape_size(shape);
            w = glorot(in * layer.spec.out_features, in, layer.spec.out_features, rng);
            layer.bias = Vector<Scalar>::Zero(static_cast<Eigen::Index>(layer.spec.out_features));
            shape = {layer.spec.out_features};
            break;
        }
        case LayerKind::conv2d:
        case LayerKind::conv3d: {
            const ConvGeom g = conv_geom(layer.spec, shape, i);
            const std::size_t kv = g.kernel_volume();
            w = glorot(g.out_ch * g.in_ch * kv, g.in_ch * kv, g.out_ch * kv, rng);
            layer.bias = Vector<Scalar>::Zero(static_cast<Eigen::Index>(g.out_ch));
            shape = layer.spec.kind == LayerKind::conv3d ? Shape{g.out_ch, g.out_d, g.out_h, g.out_w}
                                                         : Shape{g.out_ch, g.out_h, g.out_w};
            break;
        }
        case LayerKind::flatten:
            shape = {shape_size(shape)};
            break;
        case LayerKind::relu:
        case LayerKind::softmax:
            break;
        }
        layer.weights.resize(static_cast<Eigen::Index>(w.size()));
        for (std::size_t k = 0; k < w.size(); ++k)
            layer.weights[static_cast<Eigen::Index>(k)] = static_cast<Scalar>(w[k]);
        layer.output_shape = shape;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

template <typename Scalar>
void check_input(const Network<Scalar> &net, const Tensor<Scalar> &x)
{
    if (x.shape != net.input_shape)
        throw ShapeError("forward: input " + shape_string(x.shape) + " does not match " +
                         (net.layers.empty() ? std::string("network input")
                                             : layer_name(0, net.layers[0].spec.kind) + " input") +
                         " " + shape_string(net.input_shape));
}

template <typename Scalar>
ForwardCache<Scalar> forward_cached(const Network<Scalar> &net, const Tensor<Scalar> &x, std::size_t layer_count)
{
    check_input(net, x);
    const std::size_t n = std::min(layer_count, net.layers.size());
    ForwardCache<Scalar> cache;
    cache.activations.reserve(n + 1);
    cache.activations.push_back(x);
    for (std::size_t i = 0; i < n; ++i)
        cache.activations.push_back(apply_layer(net.layers[i], cache.activations.back(), i));
    return cache;
}

template <typename Scalar>
Tensor<Scalar> forward(const Network<Scalar> &net, const Tensor<Scalar> &x)
{
    check_input(net, x);
    Tensor<Scalar> t = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        t = apply_layer(net.layers[i], t, i);
    return t;
}

template <typename Scalar>
Gradients zero_gradients(const Network<Scalar> &net)
{
    Gradients g;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto &l = net.layers[i];
        if (!l.trainable())
            continue;
        g.push_back({i, ParamSlot::weights, Eigen::VectorXd::Zero(l.weights.size())});
        g.push_back({i, ParamSlot::bias, Eigen::VectorXd::Zero(l.bias.size())});
    }
    return g;
}

template <typename Scalar>
void backward_accumulate(const Network<Scalar> &net, const ForwardCache<Scalar> &cache,
                         const Eigen::VectorXd &grad_output, Gradients &accum, Eigen::VectorXd *input_grad)
{
    const std::size_t n = cache.activations.size() - 1;
    if (n > net.layers.size())
        throw ShapeError("backward: cache is longer than the network");
    if (static_cast<std::size_t>(grad_output.size()) != cache.output().size())
        throw ShapeError("backward: output gradient has " + std::to_string(grad_output.size()) + " entries, expected " +
                         std::to_string(cache.output().size()));

    // Locate accumulator slots; they must mirror zero_gradients(net).
    std::vector<std::ptrdiff_t> slot(net.layers.size(), -1);
    {
        std::size_t k = 0;
        for (std::size_t i = 0; i < net.layers.size(); ++i) {
            if (!net.layers[i].trainable())
                continue;
            if (k + 1 >= accum.size() || accum[k].layer != i || accum[k + 1].layer != i ||
                accum[k].values.size() != net.layers[i].weights.size() ||
                accum[k + 1].values.size() != net.layers[i].bias.size())
                throw AlignmentError("backward: gradient accumulator does not match " + layer_name(i, net.layers[i].spec.kind));
            slot[i] = static_cast<std::ptrdiff_t>(k);
            k += 2;
        }
        if (k != accum.size())
            throw AlignmentError("backward: gradient accumulator has extra entries");
    }
    std::size_t lowest_trainable = n;
    for (std::size_t i = 0; i < n; ++i)
        if (net.layers[i].trainable()) {
            lowest_trainable = i;
            break;
        }

    Eigen::VectorXd g = grad_output;
    for (std::size_t idx = n; idx-- > 0;) {
        if (!input_grad && idx < lowest_trainable)
            return;
        const auto &layer = net.layers[idx];
        const auto &x = cache.activations[idx].values;
        const auto &y = cache.activations[idx + 1].values;
        const bool need_dx = input_grad || idx > lowest_trainable;
        double *dw = slot[idx] >= 0 ? accum[static_cast<std::size_t>(slot[idx])].values.data() : nullptr;
        double *db = slot[idx] >= 0 ? accum[static_cast<std::size_t>(slot[idx]) + 1].values.data() : nullptr;
        Eigen::VectorXd dx;
        switch (layer.spec.kind) {
        case LayerKind::dense: {
            const auto out = static_cast<Eigen::Index>(layer.spec.out_features);
            const auto in = x.size();
            const Eigen::VectorXd xd = x.template cast<double>();
            if (dw) {
                Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(dw, out, in);
                gw.noalias() += g * xd.transpose();
                Eigen::Map<Eigen::VectorXd>(db, out) += g;
            }
            if (need_dx) {
                RowMajorMap<Scalar> w(layer.weights.data(), out, in);
                dx = Eigen::VectorXd::Zero(in);
                for (Eigen::Index i = 0; i < out; ++i)
                    if (g[i] != 0.0)
                        dx += g[i] * w.row(i).template cast<double>().transpose();
            }
            break;
        }
        case LayerKind::conv2d:
        case LayerKind::conv3d:
            conv_backward(conv_geom(layer.spec, layer.input_shape, idx), layer.weights, x, g, dw, db,
                          need_dx ? &dx : nullptr);
            break;
        case LayerKind::relu:
            dx = g.array() * (x.array() > Scalar(0)).template cast<double>();
            break;
        case LayerKind::flatten:
            dx = g;
            break;
        case LayerKind::softmax: {
            const Eigen::VectorXd p = y.template cast<double>();
            dx = p.array() * (g.array() - g.dot(p));
            break;
        }
        }
        if (!need_dx)
            return;
        g = std::move(dx);
    }
    if (input_grad)
        *input_grad = std::move(g);
}

double loss_ce(const Eigen::Ref<const Eigen::VectorXd> &probabilities, std::size_t label)
{
    if (label >= static_cast<std::size_t>(probabilities.size()))
        throw ShapeError("loss_ce: label index " + std::to_string(label) + " outside " +
                         std::to_string(probabilities.size()) + " scores");
    return -std::log(std::max(probabilities[static_cast<Eigen::Index>(label)], kProbabilityFloor));
}

double loss_ce(const Eigen::Ref<const Eigen::VectorXd> &probabilities, const Eigen::Ref<const Eigen::VectorXd> &one_hot)
{
    if (probabilities.size() != one_hot.size())
        throw ShapeError("loss_ce: scores and label lengths differ");
    Eigen::Index label = -1;
    for (Eigen::Index i = 0; i < one_hot.size(); ++i) {
        if (one_hot[i] == 1.0 && label < 0)
            label = i;
        else if (one_hot[i] != 0.0)
            throw std::invalid_argument("loss_ce: label is not one-hot");
    }
    if (label < 0)
        throw std::invalid_argument("loss_ce: label is not one-hot");
    return loss_ce(probabilities, static_cast<std::size_t>(label));
}

Eigen::VectorXd loss_ce_gradient(const Eigen::Ref<const Eigen::VectorXd> &probabilities, std::size_t label)
{
    Eigen::VectorXd g = Eigen::VectorXd::Zero(probabilities.size());
    const double p = probabilities[static_cast<Eigen::Index>(label)];
    if (p > kProbabilityFloor)
        g[static_cast<Eigen::Index>(label)] = -1.0 / p;
    return g;
}

template <typename Scalar>
Gradients backward(const Network<Scalar> &net, const Tensor<Scalar> &x, std::size_t label)
{
    check_input(net, x);
    if (label >= shape_size(net.output_shape()))
        throw ShapeError("backward: label index outside network output");
    Gradients g = zero_gradients(net);
    if (g.empty())
        return g;
    const auto cache = forward_cached(net, x);
    const Eigen::VectorXd p = cache.output().values.template cast<double>();
    backward_accumulate(net, cache, loss_ce_gradient(p, label), g);
    return g;
}

template <typename Scalar>
void sgd_step(Network<Scalar> &net, const Gradients &grads, const TrainConfig &cfg, MomentumState &state)
{
    cfg.validate();
    std::vector<const ParamGradient *> live;
    for (const auto &g : grads) {
        if (g.layer >= net.layers.size())
            throw AlignmentError("sgd_step: gradient addresses missing layer " + std::to_string(g.layer));
        if (net.layers[g.layer].trainable())
            live.push_back(&g);
    }
    const Gradients expected = zero_gradients(net);
    if (live.size() != expected.size())
        throw AlignmentError("sgd_step: expected " + std::to_string(expected.size()) + " gradient blocks, got " +
                             std::to_string(live.size()));
    for (std::size_t i = 0; i < live.size(); ++i)
        if (live[i]->layer != expected[i].layer || live[i]->slot != expected[i].slot ||
            live[i]->values.size() != expected[i].values.size())
            throw AlignmentError("sgd_step: gradient block " + std::to_string(i) + " does not match layer " +
                                 std::to_string(expected[i].layer));
    if (state.velocity.empty())
        for (const auto &e : expected)
            state.velocity.push_back(Eigen::VectorXd::Zero(e.values.size()));
    if (state.velocity.size() != live.size())
        throw AlignmentError("sgd_step: momentum state does not match the network");

    for (std::size_t i = 0; i < live.size(); ++i) {
        auto &layer = net.layers[live[i]->layer];
        auto &param = live[i]->slot == ParamSlot::weights ? layer.weights : layer.bias;
        auto &v = state.velocity[i];
        if (v.size() != param.size())
            throw AlignmentError("sgd_step: momentum buffer size mismatch");
        v = cfg.momentum * v + live[i]->values;
        param = (param.template cast<double>() - cfg.learning_rate * v).template cast<Scalar>();
    }
}

template <typename Scalar>
void sgd_step(Network<Scalar> &net, const Gradients &grads, const TrainConfig &cfg)
{
    MomentumState fresh;
    sgd_step(net, grads, cfg, fresh);
}

namespace {

std::vector<bool> relu_pattern(const Network<double> &net, const Tensor<double> &x)
{
    const auto cache = forward_cached(net, x);
    std::vector<bool> mask;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (net.layers[i].spec.kind == LayerKind::relu)
            for (Eigen::Index k = 0; k < cache.activations[i].values.size(); ++k)
                mask.push_back(cache.activations[i].values[k] > 0.0);
    return mask;
}

double loss_at(const Network<double> &net, const Tensor<double> &x, std::size_t label)
{
    return loss_ce(forward(net, x).values, label);
}

} // namespace

template <typename Scalar>
double grad_check(const Network<Scalar> &net_in, const Tensor<Scalar> &x_in, std::size_t label, double epsilon,
                  std::size_t samples, std::uint64_t seed)
{
    Network<double> net = net_in.template cast<double>();
    const Tensor<double> x = x_in.template cast<double>();
    const Gradients analytic = backward(net, x, label);
    if (analytic.empty())
        return 0.0;

    std::vector<std::pair<std::size_t, Eigen::Index>> pool;
    for (std::size_t b = 0; b < analytic.size(); ++b)
        for (Eigen::Index k = 0; k < analytic[b].values.size(); ++k)
            pool.emplace_back(b, k);
    Rng rng(seed);
    shuffle(pool, rng);

    const auto base_mask = relu_pattern(net, x);
    double worst = 0.0;
    std::size_t checked = 0;
    for (const auto &[block, k] : pool) {
        if (checked >= samples)
            break;
        auto &layer = net.layers[analytic[block].layer];
        auto &param = analytic[block].slot == ParamSlot::weights ? layer.weights : layer.bias;
        const double original = param[k];

        param[k] = original + epsilon;
        const double up = loss_at(net, x, label);
        const bool up_same = relu_pattern(net, x) == base_mask;
        param[k] = original - epsilon;
        const double down = loss_at(net, x, label);
        const bool down_same = relu_pattern(net, x) == base_mask;
        param[k] = original;
        if (!up_same || !down_same)
            continue; // finite difference straddles a ReLU kink

        const double numeric = (up - down) / (2.0 * epsilon);
        const double a = analytic[block].values[k];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, rel);
        ++checked;
    }
    return worst;
}

template <typename Scalar>
std::string parameter_bytes(const Network<Scalar> &net)
{
    std::string out;
    out.reserve(net.parameter_count() * 4);
    for (const auto &l : net.layers) {
        for (Eigen::Index i = 0; i < l.weights.size(); ++i)
            put_f32(out, static_cast<float>(l.weights[i]));
        for (Eigen::Index i = 0; i < l.bias.size(); ++i)
            put_f32(out, static_cast<float>(l.bias[i]));
    }
    return out;
}

template <typename Scalar>
void write_network(std::ostream &out, const Network<Scalar> &net)
{
    const Network<float> f = net.template cast<float>();
    nlohmann::json header;
    header["format"] = "beamcraft-network";
    header["version"] = "v1";
    header["seed"] = net.rng_seed;
    header["input_shape"] = net.input_shape;
    header["layers"] = nlohmann::json::array();
    for (const auto &l : f.layers)
        header["layers"].push_back(spec_json(l));
    const std::string payload = parameter_bytes(f);
    header["payload_bytes"] = payload.size();
    out << header.dump() << '\n';
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

template <typename Scalar>
Network<Scalar> read_network(std::istream &in)
{
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("network checkpoint: missing header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("network checkpoint: bad header: ") + e.what());
    }
    if (header.value("format", "") != "beamcraft-network" || header.value("version", "") != "v1")
        throw FormatError("network checkpoint: unsupported format or version");
    std::vector<LayerSpec> specs;
    for (const auto &l : header.at("layers")) {
        LayerSpec s;
        s.kind = layer_kind_from_string(l.at("kind").get<std::string>());
        s.out_features = l.at("out_features").get<std::size_t>();
        s.out_channels = l.at("out_channels").get<std::size_t>();
        s.kernel = l.at("kernel").get<std::size_t>();
        s.stride = l.at("stride").get<std::size_t>();
        s.frozen = l.at("frozen").get<bool>();
        specs.push_back(s);
    }
    Network<Scalar> net =
        make_network<Scalar>(header.at("input_shape").get<Shape>(), specs, header.at("seed").get<std::uint64_t>());
    const auto bytes = header.at("payload_bytes").get<std::size_t>();
    if (bytes != net.parameter_count() * 4)
        throw FormatError("network checkpoint: payload size does not match layer specs");
    std::string payload(bytes, '\0');
    in.read(payload.data(), static_cast<std::streamsize>(bytes));
    if (in.gcount() != static_cast<std::streamsize>(bytes))
        throw FormatError("network checkpoint: truncated payload");
    const auto *p = reinterpret_cast<const unsigned char *>(payload.data());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        auto &l = net.layers[i];
        const auto &lj = header["layers"][i];
        if (lj.at("output_shape").get<Shape>() != l.output_shape)
            throw FormatError("network checkpoint: " + layer_name(i, l.spec.kind) + " shape mismatch");
        for (Eigen::Index k = 0; k < l.weights.size(); ++k, p += 4)
            l.weights[k] = static_cast<Scalar>(get_f32(p));
        for (Eigen::Index k = 0; k < l.bias.size(); ++k, p += 4)
            l.bias[k] = static_cast<Scalar>(get_f32(p));
    }
    return net;
}

#define BEAMCRAFT_NEURAL_INSTANTIATE(S)                                                                       \
    template Network<S> make_network<S>(const Shape &, const std::vector<LayerSpec> &, std::uint64_t);       \
    template ForwardCache<S> forward_cached<S>(const Network<S> &, const Tensor<S> &, std::size_t);           \
    template Tensor<S> forward<S>(const Network<S> &, const Tensor<S> &);                                    \
    template Gradients zero_gradients<S>(const Network<S> &);                                                \
    template void backward_accumulate<S>(const Network<S> &, const ForwardCache<S> &, const Eigen::VectorXd &, \
                                         Gradients &, Eigen::VectorXd *);                                    \
    template Gradients backward<S>(const Network<S> &, const Tensor<S> &, std::size_t);                      \
    template void sgd_step<S>(Network<S> &, const Gradients &, const TrainConfig &, MomentumState &);        \
    template void sgd_step<S>(Network<S> &, const Gradients &, const TrainConfig &);                         \
    template double grad_check<S>(const Network<S> &, const Tensor<S> &, std::size_t, double, std::size_t,   \
                                  std::uint64_t);                                                             \
    template void write_network<S>(std::ostream &, const Network<S> &);                                      \
    template Network<S> read_network<S>(std::istream &);                                                     \
    template std::string parameter_bytes<S>(const Network<S> &);

BEAMCRAFT_NEURAL_INSTANTIATE(float)
BEAMCRAFT_NEURAL_INSTANTIATE(double)

} // namespace beamcraft
