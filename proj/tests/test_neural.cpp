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

#include "beamcraft/neural.hpp"
#include "beamcraft/random.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace beamcraft;

namespace {

template <typename S>
Tensor<S> vec(std::initializer_list<S> v)
{
    Vector<S> x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (S s : v)
        x(i++) = s;
    return Tensor<S>({v.size()}, x);
}

template <typename S>
Tensor<S> random_tensor(const Shape &shape, Rng &rng)
{
    Vector<S> v(static_cast<Eigen::Index>(shape_size(shape)));
    for (Eigen::Index i = 0; i < v.size(); ++i)
        v(i) = static_cast<S>(uniform(rng, -1.0, 1.0));
    return Tensor<S>(shape, v);
}

double batch_loss(const Network<float> &net, const std::vector<Tensor<float>> &xs, const std::vector<std::size_t> &ys)
{
    double sum = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        sum += loss_ce(forward(net, xs[i]).values.cast<double>(), ys[i]);
    return sum / double(xs.size());
}

} // namespace

TEST_CASE("forward examples")
{
    auto net = make_network<double>({3}, {LayerSpec::dense(3)}, 1);
    const Eigen::Matrix3d eye = Eigen::Matrix3d::Identity();
    net.layers[0].weights = Eigen::Map<const Eigen::VectorXd>(eye.data(), 9);
    const auto x = vec<double>({0.5, -2.0, 7.0});
    CHECK(forward(net, x).values == x.values);

    const auto relu = make_network<double>({2}, {LayerSpec::relu()}, 1);
    CHECK(forward(relu, vec<double>({-1.0, 2.0})).values == Eigen::Vector2d(0.0, 2.0));

    const auto soft = make_network<double>({2}, {LayerSpec::softmax()}, 1);
    const auto p0 = forward(soft, vec<double>({0.0, 0.0})).values;
    CHECK(p0(0) == doctest::Approx(0.5));
    CHECK(p0(1) == doctest::Approx(0.5));
    const auto p1 = forward(soft, vec<double>({std::log(2.0), 0.0})).values;
    CHECK(p1(0) == doctest::Approx(2.0 / 3.0));
    CHECK(p1(1) == doctest::Approx(1.0 / 3.0));
    CHECK(forward(soft, vec<double>({1000.0, 0.0})).values.allFinite());
}

TEST_CASE("forward shape errors name the layer")
{
    const auto net = make_network<float>({4}, {LayerSpec::dense(3), LayerSpec::relu()}, 2);
    try {
        forward(net, vec<float>({1.0f, 2.0f}));
        FAIL("expected a shape error");
    } catch (const ShapeError &e) {
        CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
    try {
        make_network<float>({1, 2, 2}, {LayerSpec::conv2d(4, 3, 1)}, 2);
        FAIL("expected a shape error");
    } catch (const ShapeError &e) {
        CHECK(std::string(e.what()).find("layer 0 (conv2d)") != std::string::npos);
    }
    CHECK_THROWS_AS(make_network<float>({2, 4, 4}, {LayerSpec::relu(), LayerSpec::conv3d(2, 3, 1)}, 2), ShapeError);
    CHECK_THROWS_AS((Tensor<float>({2, 2}, Vector<float>::Zero(3))), ShapeError);
}

TEST_CASE("layer shapes")
{
    const auto img = make_network<float>({1, 48, 96},
                                         {LayerSpec::conv2d(8, 3, 2), LayerSpec::relu(), LayerSpec::conv2d(16, 3, 2),
                                          LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(64)},
                                         3);
    CHECK(img.layers[0].output_shape == Shape{8, 23, 47});
    CHECK(img.layers[2].output_shape == Shape{16, 11, 23});
    CHECK(img.layers[4].output_shape == Shape{16 * 11 * 23});
    CHECK(img.output_shape() == Shape{64});
    const auto vox = make_network<float>({1, 20, 200, 10}, {LayerSpec::conv3d(8, 3, 2), LayerSpec::flatten()}, 3);
    CHECK(vox.layers[0].output_shape == Shape{8, 9, 99, 4});
    CHECK(vox.parameter_count() == 8 * 27 + 8);
    CHECK(img.parameter_count() == (8 * 9 + 8) + (16 * 8 * 9 + 16) + (16 * 11 * 23 * 64 + 64));
}

TEST_CASE("initialization bounds and determinism")
{
    const auto a = make_network<float>({10}, {LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(4)}, 9);
    const auto b = make_network<float>({10}, {LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(4)}, 9);
    const auto c = make_network<float>({10}, {LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(4)}, 10);
    CHECK(parameter_bytes(a) == parameter_bytes(b));
    CHECK(parameter_bytes(a) != parameter_bytes(c));
    CHECK(a.layers[0].weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0f / 16.0f));
    CHECK(a.layers[2].weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0f / 10.0f));
    CHECK(a.layers[0].bias.isZero());
}

TEST_CASE("cross-entropy examples")
{
    CHECK(loss_ce(Eigen::Vector3d(0.0, 1.0, 0.0), 1) == 0.0);
    CHECK(loss_ce(Eigen::Vector4d::Constant(0.25), 2) == doctest::Approx(std::log(4.0)));
    CHECK(loss_ce(Eigen::Vector2d(1.0 - 1e-15, 1e-15), 1) == doctest::Approx(-std::log(1e-12)));
    CHECK(loss_ce(Eigen::Vector2d(0.25, 0.75), Eigen::Vector2d(0.0, 1.0)) == doctest::Approx(-std::log(0.75)));
    CHECK_THROWS_AS(loss_ce(Eigen::Vector2d(0.5, 0.5), Eigen::Vector3d(0.0, 1.0, 0.0)), ShapeError);
    CHECK_THROWS_AS(loss_ce(Eigen::Vector2d(0.5, 0.5), 2), ShapeError);
}

TEST_CASE("backward examples")
{
    auto net = make_network<double>({3}, {LayerSpec::dense(5), LayerSpec::relu(), LayerSpec::dense(4), LayerSpec::softmax()}, 4);
    net.layers[2].weights.setZero();
    net.layers[2].bias.setZero();
    const auto g = backward(net, vec<double>({0.3, -0.1, 0.8}), 1);
    REQUIRE(g.size() == 4);
    CHECK(g[3].layer == 2);
    CHECK(g[3].slot == ParamSlot::bias);
    const Eigen::Vector4d expected(0.25, -0.75, 0.25, 0.25);
    CHECK((g[3].values - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(g[0].values.isZero());

    net.set_frozen(true);
    CHECK(backward(net, vec<double>({0.3, -0.1, 0.8}), 1).empty());
    CHECK(zero_gradients(net).empty());
    CHECK_THROWS_AS(backward(net, vec<double>({0.3, -0.1, 0.8}), 4), ShapeError);
}

TEST_CASE("sgd examples")
{
    auto net = make_network<float>({1}, {LayerSpec::dense(1)}, 5);
    net.layers[0].weights(0) = 1.0f;
    Gradients g = zero_gradients(net);
    g[0].values(0) = 2.0;
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.0;
    sgd_step(net, g, cfg);
    CHECK(net.layers[0].weights(0) == doctest::Approx(0.8f));

    const auto before = parameter_bytes(net);
    cfg.learning_rate = 0.0;
    sgd_step(net, g, cfg);
    CHECK(parameter_bytes(net) == before);

    auto two = make_network<float>({3}, {LayerSpec::dense(2), LayerSpec::relu(), LayerSpec::dense(2)}, 5);
    Gradients full = zero_gradients(two);
    for (auto &b : full)
        b.values.setConstant(1.0);
    two.layers[0].spec.frozen = true;
    const auto frozen = two.layers[0].weights;
    cfg.learning_rate = 0.1;
    sgd_step(two, full, cfg);
    CHECK(two.layers[0].weights == frozen);
    CHECK(two.layers[2].weights != make_network<float>({3}, {LayerSpec::dense(2), LayerSpec::relu(), LayerSpec::dense(2)}, 5).layers[2].weights);

    Gradients bad = zero_gradients(two);
    bad[0].values.resize(3);
    CHECK_THROWS_AS(sgd_step(two, bad, cfg), AlignmentError);
    bad.pop_back();
    CHECK_THROWS_AS(sgd_step(two, bad, cfg), AlignmentError);
}

TEST_CASE("momentum accumulates velocity")
{
    auto net = make_network<double>({1}, {LayerSpec::dense(1)}, 5);
    net.layers[0].weights(0) = 0.0;
    Gradients g = zero_gradients(net);
    g[0].values(0) = 1.0;
    TrainConfig cfg;
    cfg.learning_rate = 1.0;
    cfg.momentum = 0.5;
    MomentumState state;
    sgd_step(net, g, cfg, state);
    sgd_step(net, g, cfg, state);
    sgd_step(net, g, cfg, state);
    CHECK(net.layers[0].weights(0) == doctest::Approx(-(1.0 + 1.5 + 1.75)));
}

TEST_CASE("train config validation")
{
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.learning_rate = 0.0;
    CHECK_NOTHROW(cfg.validate());
    cfg.learning_rate = -0.1;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.momentum = 1.0;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.batch_size = 0;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.epochs = 0;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("grad_check examples")
{
    auto lin = make_network<double>({1}, {LayerSpec::dense(1)}, 6);
    lin.layers[0].bias.resize(1);
    lin.layers[0].spec.frozen = false;
    const auto x = vec<double>({0.7});
    CHECK(grad_check(lin, x, 0, 1e-4) < 1e-6);

    const auto two = make_network<double>({6}, {LayerSpec::dense(8), LayerSpec::relu(), LayerSpec::dense(5), LayerSpec::softmax()}, 6);
    Rng rng(6);
    CHECK(grad_check(two, random_tensor<double>({6}, rng), 3, 1e-4, 64) < 1e-4);

    auto frozen = two;
    frozen.set_frozen(true);
    CHECK(grad_check(frozen, random_tensor<double>({6}, rng), 3, 1e-4) == 0.0);
}

TEST_CASE("property: grad_check passes for every layer kind")
{
    Rng rng(71);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<LayerSpec> specs;
        Shape in;
        switch (trial % 3) {
        case 0:
            in = {static_cast<std::size_t>(uniform_int(rng, 2, 8))};
            break;
        case 1:
            in = {static_cast<std::size_t>(uniform_int(rng, 1, 2)), static_cast<std::size_t>(uniform_int(rng, 4, 7)),
                  static_cast<std::size_t>(uniform_int(rng, 4, 7))};
            specs.push_back(LayerSpec::conv2d(static_cast<std::size_t>(uniform_int(rng, 1, 3)), 3,
                                              static_cast<std::size_t>(uniform_int(rng, 1, 2))));
            specs.push_back(LayerSpec::relu());
            specs.push_back(LayerSpec::flatten());
            break;
        default:
            in = {1, static_cast<std::size_t>(uniform_int(rng, 3, 5)), static_cast<std::size_t>(uniform_int(rng, 3, 5)),
                  static_cast<std::size_t>(uniform_int(rng, 3, 5))};
            specs.push_back(LayerSpec::conv3d(2, 3, static_cast<std::size_t>(uniform_int(rng, 1, 2))));
            specs.push_back(LayerSpec::relu());
            specs.push_back(LayerSpec::flatten());
        }
        const auto classes = static_cast<std::size_t>(uniform_int(rng, 2, 6));
        specs.push_back(LayerSpec::dense(static_cast<std::size_t>(uniform_int(rng, 3, 8))));
        specs.push_back(LayerSpec::relu());
        specs.push_back(LayerSpec::dense(classes));
        specs.push_back(LayerSpec::softmax());
        const auto net = make_network<double>(in, specs, rng());
        const auto x = random_tensor<double>(in, rng);
        const auto label = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(classes) - 1));
        const double err = grad_check(net, x, label, 1e-4, 64, rng());
        CAPTURE(trial);
        CHECK(err < 1e-4);
        const auto p = forward(net, x).values;
        CHECK(std::abs(p.sum() - 1.0) < 1e-6);
        CHECK(p.minCoeff() > 0.0);
    }
}

TEST_CASE("property: frozen bytes survive any number of steps")
{
    Rng rng(73);
    for (int trial = 0; trial < 20; ++trial) {
        auto net = make_network<float>({5}, {LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(6), LayerSpec::relu(),
                                             LayerSpec::dense(3), LayerSpec::softmax()},
                                       rng());
        const auto which = static_cast<std::size_t>(2 * uniform_int(rng, 0, 2));
        net.layers[which].spec.frozen = true;
        auto frozen_only = net;
        frozen_only.layers = {net.layers[which]};
        const auto before = parameter_bytes(frozen_only);
        TrainConfig cfg;
        cfg.learning_rate = 0.05;
        MomentumState state;
        const auto steps = uniform_int(rng, 1, 25);
        for (std::int64_t s = 0; s < steps; ++s) {
            const auto x = random_tensor<float>({5}, rng);
            sgd_step(net, backward(net, x, static_cast<std::size_t>(uniform_int(rng, 0, 2))), cfg, state);
        }
        frozen_only.layers = {net.layers[which]};
        CHECK(parameter_bytes(frozen_only) == before);
    }
}

TEST_CASE("checkpoint round trip")
{
    auto net = make_network<float>({1, 6, 6},
                                   {LayerSpec::conv2d(3, 3, 1), LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(4),
                                    LayerSpec::softmax()},
                                   77);
    net.layers[3].spec.frozen = true;
    std::stringstream ss;
    write_network(ss, net);
    const std::string bytes = ss.str();
    const auto back = read_network<float>(ss);
    CHECK(back.input_shape == net.input_shape);
    CHECK(back.rng_seed == 77);
    REQUIRE(back.layers.size() == net.layers.size());
    CHECK(back.layers[3].spec.frozen);
    CHECK(parameter_bytes(back) == parameter_bytes(net));
    std::stringstream again;
    write_network(again, back);
    CHECK(again.str() == bytes);
    CHECK(bytes.find("\"v1\"") != std::string::npos);
    CHECK(parameter_bytes(net).size() == net.parameter_count() * 4);

    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_network<float>(truncated), FormatError);
    std::stringstream garbage("not a checkpoint\n");
    CHECK_THROWS_AS(read_network<float>(garbage), FormatError);
}

TEST_CASE("training is deterministic and loss decreases at small learning rates")
{
    const Dataset ds = fixtures::xor_dataset(64, 5);
    std::vector<Tensor<float>> xs;
    std::vector<std::size_t> ys;
    for (const auto &s : ds.samples) {
        Vector<float> v(2);
        v << static_cast<float>((s.gps.latitude_like - 8.0) / 2.0), static_cast<float>((s.gps.longitude_like - 45.0) / 5.0);
        xs.emplace_back(Shape{2}, v);
        ys.push_back(s.label);
    }
    const std::vector<LayerSpec> specs{LayerSpec::dense(16), LayerSpec::relu(), LayerSpec::dense(16), LayerSpec::softmax()};

    auto run = [&](double lr, std::size_t steps, std::vector<double> *losses) {
        auto net = make_network<float>({2}, specs, 12);
        TrainConfig cfg;
        cfg.learning_rate = lr;
        cfg.momentum = 0.0;
        for (std::size_t step = 0; step < steps; ++step) {
            if (losses)
                losses->push_back(batch_loss(net, xs, ys));
            Gradients sum = zero_gradients(net);
            for (std::size_t i = 0; i < xs.size(); ++i) {
                const auto g = backward(net, xs[i], ys[i]);
                for (std::size_t b = 0; b < g.size(); ++b)
                    sum[b].values += g[b].values / double(xs.size());
            }
            sgd_step(net, sum, cfg);
        }
        return net;
    };
    CHECK(parameter_bytes(run(0.05, 10, nullptr)) == parameter_bytes(run(0.05, 10, nullptr)));

    std::vector<double> losses;
    run(1e-3, 64, &losses);
    for (std::size_t i = 1; i < losses.size(); ++i) {
        CAPTURE(i);
        CHECK(losses[i] <= losses[i - 1]);
    }
    CHECK(losses.back() < losses.front());
}
