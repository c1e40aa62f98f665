// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON round-tripping for the model and training configurations plus the
// per-run manifest.  Field names mirror the structs; absent fields keep
// their defaults.

#pragma once

#include <string>

#include <json.hpp>

#include "demmamba/model.hpp"
#include "demmamba/train.hpp"

namespace demmamba {

inline constexpr const char* kArtifactVersion = "0.1.0";

inline nlohmann::json block_config_to_json(const BlockConfig& b) {
  return {{"channels", b.channels},   {"expand", b.expand},
          {"state_size", b.state_size}, {"alpha1", b.alpha1},
          {"alpha2", b.alpha2},       {"gamma", b.gamma},
          {"dw_kernel", b.dw_kernel}, {"ca_reduction", b.ca_reduction}};
}

inline BlockConfig block_config_from_json(const nlohmann::json& j) {
  BlockConfig b;
  b.channels = j.value("channels", b.channels);
  b.expand = j.value("expand", b.expand);
  b.state_size = j.value("state_size", b.state_size);
  b.alpha1 = j.value("alpha1", b.alpha1);
  b.alpha2 = j.value("alpha2", b.alpha2);
  b.gamma = j.value("gamma", b.gamma);
  b.dw_kernel = j.value("dw_kernel", b.dw_kernel);
  b.ca_reduction = j.value("ca_reduction", b.ca_reduction);
  return b;
}

inline nlohmann::json model_config_to_json(const ModelConfig& m) {
  return {{"groups", m.groups},
          {"blocks_per_kind", m.blocks_per_kind},
          {"frames", m.frames},
          {"ablation", ablation_name(m.ablation)},
          {"block", block_config_to_json(m.block)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.groups = j.value("groups", m.groups);
  m.blocks_per_kind = j.value("blocks_per_kind", m.blocks_per_kind);
  m.frames = j.value("frames", m.frames);
  if (j.contains("ablation")) m.ablation = ablation_from_name(j.at("ablation"));
  if (j.contains("block")) m.block = block_config_from_json(j.at("block"));
  return m;
}

inline nlohmann::json train_config_to_json(const TrainConfig& t) {
  return {{"lr0", t.lr0},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"milestones", t.milestones},
          {"decay", t.decay},
          {"l1_weight", t.l1_weight},
          {"feature_weight", t.feature_weight},
          {"seed", t.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.lr0 = j.value("lr0", t.lr0);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.epochs = j.value("epochs", t.epochs);
  if (j.contains("milestones")) t.milestones = j.at("milestones").get<std::vector<std::int64_t>>();
  t.decay = j.value("decay", t.decay);
  t.l1_weight = j.value("l1_weight", t.l1_weight);
  t.feature_weight = j.value("feature_weight", t.feature_weight);
  t.seed = j.value("seed", t.seed);
  return t;
}

/// Everything needed to reproduce one run: resolved configs, paths, seed,
/// artifact version, and the run's progress counters.
struct RunManifest {
  std::string command;
  ModelConfig model;
  TrainConfig train;
  std::string data_dir;
  std::string output_dir;
  std::uint64_t seed = 0;
  std::int64_t steps_completed = 0;
  std::int64_t epochs_completed = 0;
  std::int64_t skipped_clips = 0;

  nlohmann::json to_json() const {
    return {{"artifact_version", kArtifactVersion},
            {"command", command},
            {"model", model_config_to_json(model)},
            {"train", train_config_to_json(train)},
            {"data_dir", data_dir},
            {"output_dir", output_dir},
            {"seed", seed},
            {"steps_completed", steps_completed},
            {"epochs_completed", epochs_completed},
            {"skipped_clips", skipped_clips}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.value("command", "");
    if (j.contains("model")) m.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) m.train = train_config_from_json(j.at("train"));
    m.data_dir = j.value("data_dir", "");
    m.output_dir = j.value("output_dir", "");
    m.seed = j.value("seed", 0ull);
    m.steps_completed = j.value("steps_completed", 0ll);
    m.epochs_completed = j.value("epochs_completed", 0ll);
    m.skipped_clips = j.value("skipped_clips", 0ll);
    return m;
  }
};

}  // namespace demmamba
