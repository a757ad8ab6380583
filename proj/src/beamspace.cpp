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

#include "beamcraft/beamspace.hpp"

#include <array>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

namespace beamcraft {

void SweepTimingConfig::validate() const
{
    static constexpr std::array<double, 6> allowed{5, 10, 20, 40, 80, 160};
    if (std::find(allowed.begin(), allowed.end(), period_ms) == allowed.end())
        throw std::invalid_argument("SS burst period must be one of 5, 10, 20, 40, 80, 160 ms");
    if (burst_ms < 0.0 || period_ms < burst_ms)
        throw std::invalid_argument("SS burst duration must lie in [0, period]");
    if (blocks_per_burst < 1)
        throw std::invalid_argument("blocks_per_burst must be >= 1");
}

double sweep_time_ms(std::size_t num_pairs, const SweepTimingConfig &cfg)
{
    if (num_pairs < 1)
        throw std::invalid_argument("sweep_time_ms: need at least one beam pair");
    cfg.validate();
    const auto full_periods = (num_pairs - 1) / cfg.blocks_per_burst;
    return cfg.period_ms * static_cast<double>(full_periods) + cfg.burst_ms;
}

double sweep_savings_ms(std::size_t total_pairs, std::size_t k, const SweepTimingConfig &cfg)
{
    if (k < 1 || k > total_pairs)
        throw std::invalid_argument("sweep_savings_ms: k must lie in [1, total_pairs]");
    return sweep_time_ms(total_pairs, cfg) - sweep_time_ms(k, cfg);
}

std::string format_double(double value)
{
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc())
        throw std::runtime_error("format_double: conversion failed");
    return std::string(buf.data(), end);
}

void write_power_csv(std::ostream &out, const Eigen::MatrixXd &powers)
{
    for (Eigen::Index r = 0; r < powers.rows(); ++r) {
        for (Eigen::Index c = 0; c < powers.cols(); ++c) {
            if (c > 0)
                out << ',';
            out << format_double(powers(r, c));
        }
        out << '\n';
    }
}

Eigen::MatrixXd read_power_csv(std::istream &in)
{
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        std::vector<double> row;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            const auto stop = comma == std::string::npos ? line.size() : comma;
            const char *first = line.data() + start;
            while (first < line.data() + stop && *first == ' ')
                ++first;
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(first, line.data() + stop, v);
            if (ec != std::errc() || ptr != line.data() + stop)
                throw FormatError("power CSV: cannot parse field '" +
                                  line.substr(start, stop - start) + "' on row " +
                                  std::to_string(rows.size()));
            if (!(v >= 0.0))
                throw FormatError("power CSV: negative or non-finite power on row " +
                                  std::to_string(rows.size()));
            row.push_back(v);
            if (comma == std::string::npos)
                break;
            start = comma + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ShapeError("power CSV: ragged row " + std::to_string(rows.size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty())
        throw FormatError("power CSV: no rows");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return m;
}

} // namespace beamcraft
