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

#ifndef BEAMCRAFT_NEURAL_HPP
#define BEAMCRAFT_NEURAL_HPP

#include "beamcraft/errors.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

// Small feed-forward networks trained from scratch: dense, 2-D/3-D valid
// convolutions, ReLU, flatten and softmax with reverse-mode gradients and
// momentum SGD. Parameters and activations are stored as Scalar (float for
// training, double for gradient checking); reductions accumulate in double.

namespace beamcraft {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape &shape);
std::string shape_string(const Shape &shape);

enum class LayerKind { dense, conv2d, conv3d, relu, flatten, softmax };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string &name);

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t out_features = 0; // dense
    std::size_t out_channels = 0; // conv
    std::size_t kernel = 3;       // conv, cubic/square
    std::size_t stride = 1;       // conv
    bool frozen = false;

    static LayerSpec dense(std::size_t out) { return {LayerKind::dense, out, 0, 0, 0, false}; }
    static LayerSpec conv2d(std::size_t channels, std::size_t kernel, std::size_t stride)
    {
        return {LayerKind::conv2d, 0, channels, kernel, stride, false};
    }
    static LayerSpec conv3d(std::size_t channels, std::size_t kernel, std::size_t stride)
    {
        return {LayerKind::conv3d, 0, channels, kernel, stride, false};
    }
    static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 0, false}; }
    static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 0, 0, false}; }
    static LayerSpec softmax() { return {LayerKind::softmax, 0, 0, 0, 0, false}; }
};

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct Tensor {
    Shape shape;
    Vector<Scalar> values; // row-major

    Tensor() = default;
    Tensor(Shape s, Vector<Scalar> v) : shape(std::move(s)), values(std::move(v))
    {
        if (shape_size(shape) != static_cast<std::size_t>(values.size()))
            throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                             shape_string(shape));
    }

    std::size_t size() const { return static_cast<std::size_t>(values.size()); }

    template <typename Other>
    Tensor<Other> cast() const
    {
        return Tensor<Other>(shape, values.template cast<Other>());
    }
};

template <typename Scalar>
struct Layer {
    LayerSpec spec;
    Shape input_shape;
    Shape output_shape;
    Vector<Scalar> weights; // dense: out x in row-major; conv: [out_ch][in_ch][kernel volume]
    Vector<Scalar> bias;

    bool has_parameters() const { return weights.size() > 0 || bias.size() > 0; }
    bool trainable() const { return has_parameters() && !spec.frozen; }
};

template <typename Scalar>
struct Network {
    Shape input_shape;
    std::vector<Layer<Scalar>> layers;
    std::uint64_t rng_seed = 0;

    const Shape &output_shape() const { return layers.empty() ? input_shape : layers.back().output_shape; }
    std::size_t parameter_count() const;
    void set_frozen(bool frozen);

    template <typename Other>
    Network<Other> cast() const
    {
        Network<Other> out;
        out.input_shape = input_shape;
        out.rng_seed = rng_seed;
        for (const auto &l : layers)
            out.layers.push_back(
                {l.spec, l.input_shape, l.output_shape, l.weights.template cast<Other>(), l.bias.template cast<Other>()});
        return out;
    }
};

// Build a network, infer layer shapes and draw Glorot-uniform weights (zero bias) from the seed.
template <typename Scalar>
Network<Scalar> make_network(const Shape &input_shape, const std::vector<LayerSpec> &specs, std::uint64_t seed);

// activations[0] is the input, activations[i + 1] the output of layer i.
template <typename Scalar>
struct ForwardCache {
    std::vector<Tensor<Scalar>> activations;
    const Tensor<Scalar> &output() const { return activations.back(); }
};

template <typename Scalar>
ForwardCache<Scalar> forward_cached(const Network<Scalar> &net, const Tensor<Scalar> &x,
                                    std::size_t layer_count = std::numeric_limits<std::size_t>::max());

template <typename Scalar>
Tensor<Scalar> forward(const Network<Scalar> &net, const Tensor<Scalar> &x);

enum class ParamSlot { weights, bias };

struct ParamGradient {
    std::size_t layer = 0;
    ParamSlot slot = ParamSlot::weights;
    Eigen::VectorXd values;
};

// One entry per trainable parameter block, in layer order, weights before bias.
using Gradients = std::vector<ParamGradient>;

template <typename Scalar>
Gradients zero_gradients(const Network<Scalar> &net);

// Reverse pass from dLoss/dOutput of the cached forward (which may stop early).
// Adds parameter gradients into `accum` (shaped by zero_gradients) and, when
// `input_grad` is non-null, writes dLoss/dInput.
template <typename Scalar>
void backward_accumulate(const Network<Scalar> &net, const ForwardCache<Scalar> &cache,
                         const Eigen::VectorXd &grad_output, Gradients &accum, Eigen::VectorXd *input_grad = nullptr);

// -log(max(p[label], 1e-12))
double loss_ce(const Eigen::Ref<const Eigen::VectorXd> &probabilities, std::size_t label);
double loss_ce(const Eigen::Ref<const Eigen::VectorXd> &probabilities, const Eigen::Ref<const Eigen::VectorXd> &one_hot);

// dLoss/dProbabilities of loss_ce.
Eigen::VectorXd loss_ce_gradient(const Eigen::Ref<const Eigen::VectorXd> &probabilities, std::size_t label);

// Gradients of loss_ce(forward(net, x), label) for every trainable parameter.
template <typename Scalar>
Gradients backward(const Network<Scalar> &net, const Tensor<Scalar> &x, std::size_t label);

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 16;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;

    void validate() const;
};

// Velocity buffers for momentum SGD, lazily shaped on first use.
struct MomentumState {
    std::vector<Eigen::VectorXd> velocity;
};

// v <- momentum * v + g; w <- w - lr * v. Entries addressing frozen layers are
// ignored; the rest must line up with zero_gradients(net).
template <typename Scalar>
void sgd_step(Network<Scalar> &net, const Gradients &grads, const TrainConfig &cfg, MomentumState &state);

template <typename Scalar>
void sgd_step(Network<Scalar> &net, const Gradients &grads, const TrainConfig &cfg);

// Max relative error between analytic and central-difference gradients over
// up to `samples` trainable parameters. Evaluated in double. Parameters whose
// perturbation flips a ReLU are resampled. Returns 0 for a fully frozen net.
template <typename Scalar>
double grad_check(const Network<Scalar> &net, const Tensor<Scalar> &x, std::size_t label, double epsilon,
                  std::size_t samples = 64, std::uint64_t seed = 0);

// Checkpoint: JSON header line + little-endian float32 parameter payload.
template <typename Scalar>
void write_network(std::ostream &out, const Network<Scalar> &net);

template <typename Scalar>
Network<Scalar> read_network(std::istream &in);

// The float32 payload alone, as written by write_network.
template <typename Scalar>
std::string parameter_bytes(const Network<Scalar> &net);

#define BEAMCRAFT_NEURAL_EXTERN(S)                                                                               \
    extern template Network<S> make_network<S>(const Shape &, const std::vector<LayerSpec> &, std::uint64_t);  \
    extern template ForwardCache<S> forward_cached<S>(const Network<S> &, const Tensor<S> &, std::size_t);      \
    extern template Tensor<S> forward<S>(const Network<S> &, const Tensor<S> &);                               \
    extern template Gradients zero_gradients<S>(const Network<S> &);                                           \
    extern template void backward_accumulate<S>(const Network<S> &, const ForwardCache<S> &,                   \
                                                const Eigen::VectorXd &, Gradients &, Eigen::VectorXd *);      \
    extern template Gradients backward<S>(const Network<S> &, const Tensor<S> &, std::size_t);                 \
    extern template void sgd_step<S>(Network<S> &, const Gradients &, const TrainConfig &, MomentumState &);   \
    extern template void sgd_step<S>(Network<S> &, const Gradients &, const TrainConfig &);                    \
    extern template double grad_check<S>(const Network<S> &, const Tensor<S> &, std::size_t, double,           \
                                         std::size_t, std::uint64_t);                                          \
    extern template void write_network<S>(std::ostream &, const Network<S> &);                                 \
    extern template Network<S> read_network<S>(std::istream &);                                                \
    extern template std::string parameter_bytes<S>(const Network<S> &);

BEAMCRAFT_NEURAL_EXTERN(float)
BEAMCRAFT_NEURAL_EXTERN(double)
#undef BEAMCRAFT_NEURAL_EXTERN

} // namespace beamcraft

#endif // BEAMCRAFT_NEURAL_HPP
