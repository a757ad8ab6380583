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

#ifndef BEAMCRAFT_BEAMSPACE_HPP
#define BEAMCRAFT_BEAMSPACE_HPP

#include "beamcraft/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <iosfwd>
#include <numbers>
#include <string>
#include <type_traits>
#include <vector>

// Codebook beamforming over a transmitter/receiver array pair: beam-pair powers,
// top-K candidate selection, one-hot labels and 5G-NR sweep timing.

namespace beamcraft {

enum class Side { transmitter, receiver };
enum class Normalization { raw, max_one };

template <typename Scalar>
using ComplexVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;

template <typename Scalar>
using ComplexMatrix = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;

// Complex gain between every TX and RX array element, rows = TX elements.
template <typename Scalar>
using ChannelMatrix = ComplexMatrix<Scalar>;

template <typename Scalar>
constexpr Scalar unit_norm_tolerance()
{
    if constexpr (std::is_same_v<Scalar, float>)
        return 1e-5f;
    else
        return Scalar(1e-9);
}

template <typename Scalar>
class BeamWeightVector {
public:
    explicit BeamWeightVector(ComplexVector<Scalar> weights) : weights_(std::move(weights))
    {
        if (weights_.size() < 1)
            throw std::invalid_argument("beam weight vector must have at least one entry");
        if (std::abs(weights_.norm() - Scalar(1)) > unit_norm_tolerance<Scalar>())
            throw std::invalid_argument("beam weight vector must have unit norm");
    }

    const ComplexVector<Scalar> &weights() const { return weights_; }
    Eigen::Index size() const { return weights_.size(); }

private:
    ComplexVector<Scalar> weights_;
};

// Ordered set of unit-norm beams, stored column-wise (array_size x count).
template <typename Scalar>
class Codebook {
public:
    Codebook(ComplexMatrix<Scalar> weights, Side side) : weights_(std::move(weights)), side_(side)
    {
        if (weights_.rows() < 1 || weights_.cols() < 1)
            throw std::invalid_argument("codebook needs at least one element of length >= 1");
        for (Eigen::Index i = 0; i < weights_.cols(); ++i)
            if (std::abs(weights_.col(i).norm() - Scalar(1)) > unit_norm_tolerance<Scalar>())
                throw std::invalid_argument("codebook element " + std::to_string(i) + " is not unit norm");
    }

    Eigen::Index size() const { return weights_.cols(); }
    Eigen::Index array_size() const { return weights_.rows(); }
    Side side() const { return side_; }
    const ComplexMatrix<Scalar> &weights() const { return weights_; }
    auto element(Eigen::Index i) const { return weights_.col(i); }

private:
    ComplexMatrix<Scalar> weights_;
    Side side_;
};

struct BeamPairIndex {
    std::size_t tx_index = 0;
    std::size_t rx_index = 0;
    std::size_t flat_index = 0;

    static BeamPairIndex from_pair(std::size_t tx, std::size_t rx, std::size_t rx_count)
    {
        return {tx, rx, tx * rx_count + rx};
    }
    static BeamPairIndex from_flat(std::size_t flat, std::size_t rx_count)
    {
        return {flat / rx_count, flat % rx_count, flat};
    }
    friend bool operator==(const BeamPairIndex &, const BeamPairIndex &) = default;
};

template <typename Scalar>
struct BeamPowerMatrix {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> powers;
    Normalization normalization = Normalization::raw;

    std::size_t tx_count() const { return static_cast<std::size_t>(powers.rows()); }
    std::size_t rx_count() const { return static_cast<std::size_t>(powers.cols()); }
    std::size_t pair_count() const { return static_cast<std::size_t>(powers.size()); }

    // Row-major flat access, matching BeamPairIndex::flat_index.
    Scalar flat(std::size_t i) const
    {
        const auto n = rx_count();
        return powers(static_cast<Eigen::Index>(i / n), static_cast<Eigen::Index>(i % n));
    }
};

struct TopKSelection {
    std::size_t k = 0;
    std::vector<BeamPairIndex> pairs;
};

struct SweepTimingConfig {
    double period_ms = 20.0;
    double burst_ms = 5.0;
    std::size_t blocks_per_burst = 32;

    void validate() const;
};

// Unit-norm DFT beams over a uniform linear array:
// element m, entry n = exp(-i 2 pi n m / num_elements) / sqrt(array_size).
template <typename Scalar = double>
Codebook<Scalar> make_dft_codebook(std::size_t array_size, std::size_t num_elements, Side side)
{
    if (array_size == 0 || num_elements == 0)
        throw std::invalid_argument("DFT codebook sizes must be positive");
    const auto rows = static_cast<Eigen::Index>(array_size);
    const auto cols = static_cast<Eigen::Index>(num_elements);
    ComplexMatrix<Scalar> w(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(array_size));
    for (Eigen::Index m = 0; m < cols; ++m) {
        for (Eigen::Index n = 0; n < rows; ++n) {
            // Reduce n*m modulo the element count so the phase argument stays small.
            const auto turns = static_cast<double>((n * m) % cols) / static_cast<double>(cols);
            const double phase = -2.0 * std::numbers::pi * turns;
            w(n, m) = std::complex<Scalar>(static_cast<Scalar>(scale * std::cos(phase)),
                                           static_cast<Scalar>(scale * std::sin(phase)));
        }
    }
    return Codebook<Scalar>(std::move(w), side);
}

template <typename Scalar>
bool all_finite(const ChannelMatrix<Scalar> &h)
{
    return h.real().allFinite() && h.imag().allFinite();
}

// |w_t^H H w_r|^2
template <typename DerivedT, typename Scalar, typename DerivedR>
Scalar pair_power(const Eigen::MatrixBase<DerivedT> &w_t, const ChannelMatrix<Scalar> &h,
                  const Eigen::MatrixBase<DerivedR> &w_r)
{
    if (w_t.size() != h.rows() || w_r.size() != h.cols())
        throw ShapeError("pair_power: beam lengths (" + std::to_string(w_t.size()) + ", " +
                         std::to_string(w_r.size()) + ") do not match channel " +
                         std::to_string(h.rows()) + "x" + std::to_string(h.cols()));
    const std::complex<Scalar> y = (w_t.adjoint() * h * w_r).value();
    return std::norm(y);
}

template <typename Scalar>
Scalar pair_power(const BeamWeightVector<Scalar> &w_t, const ChannelMatrix<Scalar> &h,
                  const BeamWeightVector<Scalar> &w_r)
{
    return pair_power(w_t.weights(), h, w_r.weights());
}

template <typename Scalar>
BeamPowerMatrix<Scalar> normalize_max_one(BeamPowerMatrix<Scalar> p)
{
    const Scalar peak = p.powers.size() > 0 ? p.powers.maxCoeff() : Scalar(0);
    if (peak > Scalar(0))
        p.powers /= peak;
    p.normalization = Normalization::max_one;
    return p;
}

// Entry (m, n) is the power of TX beam m against RX beam n.
template <typename Scalar>
BeamPowerMatrix<Scalar> power_matrix(const Codebook<Scalar> &tx, const Codebook<Scalar> &rx,
                                     const ChannelMatrix<Scalar> &h,
                                     Normalization normalization = Normalization::max_one)
{
    if (tx.array_size() != h.rows() || rx.array_size() != h.cols())
        throw ShapeError("power_matrix: codebook lengths (" + std::to_string(tx.array_size()) + ", " +
                         std::to_string(rx.array_size()) + ") do not match channel " +
                         std::to_string(h.rows()) + "x" + std::to_string(h.cols()));
    if (!all_finite(h))
        throw std::invalid_argument("power_matrix: channel has non-finite entries");
    BeamPowerMatrix<Scalar> p;
    p.powers = (tx.weights().adjoint() * h * rx.weights()).cwiseAbs2();
    p.normalization = Normalization::raw;
    if (normalization == Normalization::max_one)
        return normalize_max_one(std::move(p));
    return p;
}

// The k strongest pairs, descending power, ties by ascending flat index.
template <typename Scalar>
TopKSelection top_k_beams(const BeamPowerMatrix<Scalar> &p, std::size_t k)
{
    if (k == 0)
        throw std::invalid_argument("top_k_beams: k must be positive");
    const std::size_t total = p.pair_count();
    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i)
        order[i] = i;
    const std::size_t take = std::min(k, total);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&p](std::size_t a, std::size_t b) {
                          const Scalar pa = p.flat(a), pb = p.flat(b);
                          return pa != pb ? pa > pb : a < b;
                      });
    TopKSelection sel;
    sel.k = k;
    sel.pairs.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        sel.pairs.push_back(BeamPairIndex::from_flat(order[i], p.rx_count()));
    return sel;
}

// Flat index of the optimum pair; throws NoViableBeamError for an all-zero matrix.
template <typename Scalar>
std::size_t best_pair_index(const BeamPowerMatrix<Scalar> &p)
{
    if (p.pair_count() == 0 || !(p.powers.maxCoeff() > Scalar(0)))
        throw NoViableBeamError("power matrix has no positive entry");
    return top_k_beams(p, 1).pairs.front().flat_index;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> label_row(const BeamPowerMatrix<Scalar> &p)
{
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> y =
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(static_cast<Eigen::Index>(p.pair_count()));
    y(static_cast<Eigen::Index>(best_pair_index(p))) = Scalar(1);
    return y;
}

// T_bs = T_p * floor((pairs - 1) / blocks_per_burst) + T_ssb
double sweep_time_ms(std::size_t num_pairs, const SweepTimingConfig &cfg = {});

// Time saved by sweeping only k candidates instead of all total_pairs.
double sweep_savings_ms(std::size_t total_pairs, std::size_t k, const SweepTimingConfig &cfg = {});

// CSV: one row per TX beam, comma separated, no header, shortest round-trip decimals.
void write_power_csv(std::ostream &out, const Eigen::MatrixXd &powers);
Eigen::MatrixXd read_power_csv(std::istream &in);

std::string format_double(double value);

} // namespace beamcraft

#endif // BEAMCRAFT_BEAMSPACE_HPP
