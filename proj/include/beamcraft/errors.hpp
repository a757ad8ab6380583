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

#ifndef BEAMCRAFT_ERRORS_HPP
#define BEAMCRAFT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace beamcraft {

// Dimension or shape disagreement between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Power matrix without any positive entry; the scene has no usable beam.
class NoViableBeamError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class OutOfBoundsError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class EmptyDatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SplitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ImportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Gradient set that does not line up with the trainable parameters of a network.
class AlignmentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed file on disk (checkpoint, grid, image, manifest).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace beamcraft

#endif // BEAMCRAFT_ERRORS_HPP
