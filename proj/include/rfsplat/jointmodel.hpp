// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "rfsplat/nn.hpp"
#include "rfsplat/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

// Dual-stream joint model of multi-view image latents and Plücker rays.
//
// Timesteps here are noise levels: a state at level t is
// t * noise + (1 - t) * clean, so t = 1 is pure noise and t = 0 is data. The
// model predicts noise - clean for both modalities.
namespace rfsplat::joint {

struct StreamConfig {
    int blocks = 1;
    int hidden = 64;
    int heads = 4;
    int patch_h = 2;
    int patch_w = 2;
    int mlp_ratio = 4;
};

/// Pairing of an image block with a pose block after which both hidden
/// states are exchanged.
struct CommunicationPair {
    int image_block = 0;
    int pose_block = 0;
};

struct DualStreamConfig {
    int views = 8;
    int image_height = 8;
    int image_width = 12;
    int image_channels = 3;
    int ray_height = 10;
    int ray_width = 16;
    StreamConfig image{12, 128, 4, 2, 2, 4};
    StreamConfig pose{16, 256, 4, 2, 2, 4};
    /// The image stream communicates after every `image_comm_period` blocks.
    int image_comm_period = 3;
    bool final_layer_communicates = false;
    /// Text vocabulary size; id `num_conditions` is the null condition.
    int num_conditions = 12;
    int time_features = 64;
    /// Adds a fixed sinusoidal view-index code to tokens of both streams.
    bool view_encoding = true;

    int null_condition() const { return num_conditions; }
    void validate() const;
    std::vector<CommunicationPair> communication_pairs() const;
};

struct JointState {
    ViewTensor image;
    ViewTensor rays;
    double t_image = 1.0;
    double t_ray = 1.0;
    int condition = 0;
};

struct FieldPrediction {
    ViewTensor image;
    ViewTensor rays;
};

/// Token layout helpers shared with tests.
nn::Matrix patchify(const ViewTensor& x, int patch_h, int patch_w);
ViewTensor unpatchify(const nn::Matrix& tokens, int views, int height, int width, int channels, int patch_h,
                      int patch_w);
/// Sinusoidal features of a scalar, 1 x dim.
nn::Matrix sinusoidal_features(double value, int dim, double frequency_scale = 1000.0);

class JointModel {
public:
    JointModel(DualStreamConfig config, std::uint64_t seed);

    const DualStreamConfig& config() const { return m_config; }
    nn::ParameterSet& params() { return m_params; }
    const nn::ParameterSet& params() const { return m_params; }

    FieldPrediction forward(const JointState& state, bool communication = true) const;

    struct TapeOutput {
        nn::Var image;
        nn::Var rays;
    };
    /// Records the forward pass on `tape`; outputs are token matrices in
    /// patchify layout.
    TapeOutput forward(nn::Tape& tape, const JointState& state, bool communication = true) const;

    /// One communication exchange on tape values, exposed for testing.
    /// Both updates read the pre-update states.
    std::pair<nn::Var, nn::Var> communicate(nn::Tape& tape, int pair_index, nn::Var h_ray, nn::Var h_image,
                                            nn::Var t_ray_emb, nn::Var t_image_emb) const;

    void check_state(const JointState& state) const;

private:
    struct AttentionParams {
        int qkv_w, qkv_b, out_w, out_b;
    };
    struct BlockParams {
        int mod_w, mod_b;
        AttentionParams attn;
        int mlp1_w, mlp1_b, mlp2_w, mlp2_b;
    };
    struct StreamParams {
        int in_w, in_b, pos;
        int time1_w, time1_b, time2_w, time2_b;
        int label;
        std::vector<BlockParams> blocks;
        int final_mod_w, final_mod_b, out_w, out_b;
        int skip_w, skip_b;
    };
    struct CrossParams {
        int q_w, k_w, v_w, out_w, out_b;
    };
    struct CommParams {
        CrossParams to_ray;
        CrossParams to_image;
    };
    struct StreamRun {
        nn::Var hidden;
        nn::Var cond;
        nn::Var time_emb;
        nn::Var tokens;
    };

    StreamParams build_stream(const std::string& prefix, const StreamConfig& sc, int patch_dim, int patches,
                              Rng& rng);
    CrossParams build_cross(const std::string& prefix, int receiver, int sender, Rng& rng);

    StreamRun begin_stream(nn::Tape& tape, const StreamParams& sp, const StreamConfig& sc, const ViewTensor& x,
                           double t, int condition) const;
    nn::Var run_block(nn::Tape& tape, const BlockParams& bp, const StreamConfig& sc, nn::Var h, nn::Var cond) const;
    nn::Var finish_stream(nn::Tape& tape, const StreamParams& sp, const StreamRun& run, nn::Var h) const;
    nn::Var cross_update(nn::Tape& tape, const CrossParams& cp, int heads, nn::Var receiver, nn::Var sender,
                         nn::Var sender_time) const;

    DualStreamConfig m_config;
    nn::ParameterSet m_params;
    StreamParams m_image;
    StreamParams m_pose;
    std::vector<CommParams> m_comm;
    std::vector<CommunicationPair> m_pairs;
};

struct JointExample {
    ViewTensor image;
    ViewTensor rays;
    int condition = 0;
};

struct JointNoise {
    ViewTensor image;
    ViewTensor rays;
};

struct JointLoss {
    double total = 0.0;
    double image = 0.0;
    double ray = 0.0;
};

/// Decoupled-timestep flow-matching loss: per example, the mean squared error
/// of each modality's field against noise - clean, combined 1:1 and averaged
/// over the batch. When `grads` is non-null, parameter gradients of `total`
/// are accumulated into it.
JointLoss joint_loss(const JointModel& model, std::span<const JointExample> batch, std::span<const JointNoise> noise,
                     std::span<const double> t_image, std::span<const double> t_ray,
                     nn::ParameterSet* grads = nullptr);

struct TrainConfig {
    int steps = 5000;
    int batch = 8;
    double learning_rate = 1e-3;
    double condition_dropout = 0.1;
    double clip_norm = 1.0;
};

struct TrainLogEntry {
    long step = 0;
    double loss = 0.0;
    double loss_image = 0.0;
    double loss_ray = 0.0;
};

/// Optimizes joint_loss with Adam; every draw derives from `seed` and the
/// step index.
std::vector<TrainLogEntry> train(JointModel& model, std::span<const JointExample> dataset, const TrainConfig& config,
                                 std::uint64_t seed);

}  // namespace rfsplat::joint
