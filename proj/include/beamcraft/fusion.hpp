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

#ifndef BEAMCRAFT_FUSION_HPP
#define BEAMCRAFT_FUSION_HPP

#include "beamcraft/beamspace.hpp"
#include "beamcraft/dataset.hpp"
#include "beamcraft/neural.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace beamcraft {

enum class Modality { lidar, image, coordinate };

inline constexpr std::array<Modality, 3> kModalities{Modality::lidar, Modality::image, Modality::coordinate};

std::string to_string(Modality m);
Modality modality_from_string(const std::string &name);

using Net = Network<float>;

struct FusionConfig {
    std::size_t lidar_embedding = 64;
    std::size_t image_embedding = 64;
    std::size_t coordinate_embedding = 64;
    std::size_t fusion_hidden = 128;
    std::array<std::size_t, 3> deep_hidden{1024, 512, 512}; // fourth dense layer maps to |B|
    bool coordinate_uses_context = false;
    std::uint64_t seed = 0;

    std::size_t embedding(Modality m) const;
};

// Unimodal network: extractor ends at the penultimate embedding, head is
// dense(embedding -> |B|) + softmax.
struct UnimodalModel {
    Modality modality = Modality::coordinate;
    Net extractor;
    Net head;
    bool uses_context = false;
    // Per-feature standardisation applied to coordinate inputs (empty for grids).
    Eigen::VectorXd input_mean;
    Eigen::VectorXd input_scale;
    std::optional<double> val_top1; // percent, recorded by train_unimodal

    std::size_t embedding_size() const { return extractor.output_shape().front(); }
    std::size_t pair_count() const { return head.output_shape().front(); }
};

struct AggregatedFusionModel {
    std::array<UnimodalModel, 3> unimodal; // lidar, image, coordinate
    Net fusion_head;                       // dense(sum -> hidden) relu dense(-> |B|) softmax
};

struct IncrementalFusionModel {
    std::array<Modality, 3> ranking{}; // best first
    std::array<UnimodalModel, 3> unimodal;
    Net stage1_head; // [z_best; z_second] -> |B|; penultimate output is the stage-1 embedding
    Net stage2_head; // [z_stage1; z_third] -> |B|

    const UnimodalModel &ranked(std::size_t i) const { return unimodal[static_cast<std::size_t>(ranking[i])]; }
};

enum class PnfChoice { aggregated, incremental };

std::string to_string(PnfChoice c);
PnfChoice pnf_from_string(const std::string &name);

struct DeepFusionModel {
    std::array<UnimodalModel, 3> unimodal;
    std::variant<AggregatedFusionModel, IncrementalFusionModel> pnf;
    Net second_level; // four dense layers over [s_L; s_I; s_C; s_PNF]

    PnfChoice pnf_choice() const
    {
        return std::holds_alternative<AggregatedFusionModel>(pnf) ? PnfChoice::aggregated : PnfChoice::incremental;
    }
};

using AnyModel = std::variant<UnimodalModel, AggregatedFusionModel, IncrementalFusionModel, DeepFusionModel>;

std::string model_name(const AnyModel &model);

// Raw network input for one modality (coordinate input before standardisation).
Tensor<float> modality_input(const SceneSample &sample, Modality m, bool coordinate_uses_context);
Shape modality_shape(const SceneSample &sample, Modality m, bool coordinate_uses_context);

// Fresh, untrained model with the declared architecture for this modality.
UnimodalModel make_unimodal(Modality m, const Shape &input_shape, std::size_t pairs, const FusionConfig &cfg);

Eigen::VectorXd extract_embedding(const UnimodalModel &model, const Tensor<float> &raw_input);
Eigen::VectorXd extract_embedding(const UnimodalModel &model, const SceneSample &sample);

Eigen::VectorXd predict_scores(const UnimodalModel &model, const SceneSample &sample);
Eigen::VectorXd predict_scores(const AggregatedFusionModel &model, const SceneSample &sample);
Eigen::VectorXd predict_scores(const IncrementalFusionModel &model, const SceneSample &sample);
Eigen::VectorXd predict_scores(const DeepFusionModel &model, const SceneSample &sample);
Eigen::VectorXd predict_scores(const AnyModel &model, const SceneSample &sample);

// [s_L; s_I; s_C; s_PNF], the second-level input.
Eigen::VectorXd deep_fusion_input(const DeepFusionModel &model, const SceneSample &sample);

struct TrainLogRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_top1 = 0.0;
};
using TrainLog = std::vector<TrainLogRow>;

struct UnimodalResult {
    UnimodalModel model;
    double val_top1 = 0.0;
    TrainLog log;
};

UnimodalResult train_unimodal(Modality m, const Dataset &train, const Dataset &val, const TrainConfig &cfg,
                              const FusionConfig &fusion = {});

// Starts from `init` instead of a fresh model (coordinate standardisation is recomputed).
UnimodalResult train_unimodal(UnimodalModel init, const Dataset &train, const Dataset &val, const TrainConfig &cfg);

struct AggregatedResult {
    AggregatedFusionModel model;
    double val_top1 = 0.0;
    TrainLog log;
};

AggregatedResult train_aggregated(const std::array<UnimodalModel, 3> &unimodal, const Dataset &train,
                                  const Dataset &val, const TrainConfig &cfg, const FusionConfig &fusion = {});

struct IncrementalResult {
    IncrementalFusionModel model;
    double val_top1 = 0.0;
    TrainLog log; // stage 1 epochs followed by stage 2 epochs
};

// Descending by val top-1, ties in lidar, image, coordinate order. Missing entries throw TrainingError.
std::array<Modality, 3> rank_modalities(const std::array<std::optional<double>, 3> &val_top1);

IncrementalResult train_incremental(const std::array<UnimodalModel, 3> &unimodal, const Dataset &train,
                                    const Dataset &val, const TrainConfig &cfg, const FusionConfig &fusion = {});

struct DeepResult {
    DeepFusionModel model;
    double val_top1 = 0.0;
    TrainLog log;
};

DeepResult train_deep_fusion(const std::array<UnimodalModel, 3> &unimodal,
                             const std::variant<AggregatedFusionModel, IncrementalFusionModel> &pnf,
                             const Dataset &train, const Dataset &val, const TrainConfig &cfg,
                             const FusionConfig &fusion = {});

// True if `label` is among the k highest scores, ties broken by ascending index.
bool in_top_k(const Eigen::VectorXd &scores, std::size_t label, std::size_t k);

using Scorer = std::function<Eigen::VectorXd(const SceneSample &)>;

struct ModelEval {
    std::string name;
    std::map<std::size_t, double> accuracy_percent;
    std::map<std::size_t, double> sweep_ms;
};

struct EvalReport {
    std::vector<ModelEval> models;
    std::vector<std::size_t> ks;
    std::size_t sample_count = 0;

    nlohmann::json to_json() const;
    // model,k,accuracy,sweep_ms; one row per (model, k), no header.
    std::string to_csv() const;
    std::string to_table() const;
};

EvalReport evaluate(const std::vector<std::pair<std::string, Scorer>> &models, const Dataset &test,
                    const std::vector<std::size_t> &ks, const SweepTimingConfig &timing = {});

double top1_percent(const Scorer &scorer, const Dataset &ds);

// Model checkpoint: JSON header line naming components, then each network checkpoint in order.
void save_model(std::ostream &out, const AnyModel &model);
AnyModel load_model(std::istream &in);
void save_model(const std::filesystem::path &path, const AnyModel &model);
AnyModel load_model(const std::filesystem::path &path);

std::string format_log_csv(const TrainLog &log);

} // namespace beamcraft

#endif // BEAMCRAFT_FUSION_HPP
