// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/jointmodel.hpp"

#include "rfsplat/flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

namespace rfsplat::joint {

using nn::Matrix;
using nn::Tape;
using nn::Var;

void DualStreamConfig::validate() const {
    auto check_stream = [](const StreamConfig& s, int h, int w, const char* which) {
        RFSPLAT_CHECK(s.blocks > 0 && s.hidden > 0 && s.heads > 0 && s.mlp_ratio > 0, ErrorCode::InvalidConfig,
                      std::string(which) + " stream sizes must be positive");
        RFSPLAT_CHECK(s.hidden % s.heads == 0, ErrorCode::InvalidConfig,
                      std::string(which) + " hidden size must be divisible by heads");
        RFSPLAT_CHECK(s.patch_h > 0 && s.patch_w > 0 && h % s.patch_h == 0 && w % s.patch_w == 0,
                      ErrorCode::InvalidConfig, std::string(which) + " patch must tile the grid");
    };
    RFSPLAT_CHECK(views > 0 && image_channels > 0, ErrorCode::InvalidConfig, "views and channels must be positive");
    check_stream(image, image_height, image_width, "image");
    check_stream(pose, ray_height, ray_width, "pose");
    RFSPLAT_CHECK(image_comm_period > 0, ErrorCode::InvalidConfig, "communication period must be positive");
    RFSPLAT_CHECK(num_conditions > 0 && time_features > 0 && time_features % 2 == 0, ErrorCode::InvalidConfig,
                  "conditions and time features must be positive (time features even)");
    int last_pose = -1;
    for (const auto& p : communication_pairs()) {
        RFSPLAT_CHECK(p.pose_block > last_pose && p.pose_block < pose.blocks && p.image_block < image.blocks,
                      ErrorCode::InvalidConfig, "communication pairs must be increasing and in range");
        last_pose = p.pose_block;
    }
}

std::vector<CommunicationPair> DualStreamConfig::communication_pairs() const {
    std::vector<CommunicationPair> pairs;
    int last_pose = -1;
    for (int j = image_comm_period - 1; j < image.blocks; j += image_comm_period) {
        if (!final_layer_communicates && j == image.blocks - 1)
            continue;
        // Place the pose partner at the same relative depth.
        int pb = static_cast<int>(std::lround(static_cast<double>(j + 1) * pose.blocks / image.blocks)) - 1;
        pb = std::clamp(pb, 0, pose.blocks - 1);
        if (!final_layer_communicates && pb == pose.blocks - 1)
            continue;
        if (pb <= last_pose)
            continue;
        pairs.push_back({j, pb});
        last_pose = pb;
    }
    return pairs;
}

Matrix patchify(const ViewTensor& x, int patch_h, int patch_w) {
    RFSPLAT_CHECK(x.height % patch_h == 0 && x.width % patch_w == 0, ErrorCode::ShapeMismatch,
                  "patch does not tile the tensor");
    const int gh = x.height / patch_h;
    const int gw = x.width / patch_w;
    const int per_view = gh * gw;
    Matrix tokens(static_cast<Eigen::Index>(x.views) * per_view, patch_h * patch_w * x.channels);
    for (int v = 0; v < x.views; ++v)
        for (int py = 0; py < gh; ++py)
            for (int px = 0; px < gw; ++px) {
                Eigen::Index row = static_cast<Eigen::Index>(v) * per_view + py * gw + px;
                Eigen::Index col = 0;
                for (int dy = 0; dy < patch_h; ++dy)
                    for (int dx = 0; dx < patch_w; ++dx)
                        for (int c = 0; c < x.channels; ++c)
                            tokens(row, col++) = x.at(v, py * patch_h + dy, px * patch_w + dx, c);
            }
    return tokens;
}

ViewTensor unpatchify(const Matrix& tokens, int views, int height, int width, int channels, int patch_h,
                      int patch_w) {
    const int gh = height / patch_h;
    const int gw = width / patch_w;
    const int per_view = gh * gw;
    RFSPLAT_CHECK(tokens.rows() == static_cast<Eigen::Index>(views) * per_view &&
                      tokens.cols() == patch_h * patch_w * channels,
                  ErrorCode::ShapeMismatch, "token matrix does not match the requested layout");
    ViewTensor x = ViewTensor::zeros(views, height, width, channels);
    for (int v = 0; v < views; ++v)
        for (int py = 0; py < gh; ++py)
            for (int px = 0; px < gw; ++px) {
                Eigen::Index row = static_cast<Eigen::Index>(v) * per_view + py * gw + px;
                Eigen::Index col = 0;
                for (int dy = 0; dy < patch_h; ++dy)
                    for (int dx = 0; dx < patch_w; ++dx)
                        for (int c = 0; c < channels; ++c)
                            x.at(v, py * patch_h + dy, px * patch_w + dx, c) = tokens(row, col++);
            }
    return x;
}

Matrix sinusoidal_features(double value, int dim, double frequency_scale) {
    Matrix out(1, dim);
    const int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(10000.0) * k / half);
        double arg = frequency_scale * value * freq;
        out(0, k) = std::cos(arg);
        out(0, half + k) = std::sin(arg);
    }
    return out;
}

namespace {

Matrix uniform_matrix(int rows, int cols, double limit, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = limit * (2.0 * rng.uniform() - 1.0);
    return m;
}

Matrix glorot(int rows, int cols, Rng& rng) {
    return uniform_matrix(rows, cols, std::sqrt(6.0 / (rows + cols)), rng);
}

Var attention(Tape& tape, Var q, Var k, Var v, int heads) {
    const int width = static_cast<int>(tape.value(q).cols());
    const int dh = width / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = tape.slice_cols(q, h * dh, dh);
        Var kh = tape.slice_cols(k, h * dh, dh);
        Var vh = tape.slice_cols(v, h * dh, dh);
        Var p = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), inv));
        outs.push_back(tape.matmul(p, vh));
    }
    return heads == 1 ? outs.front() : tape.concat_cols(outs);
}

Var modulate(Tape& tape, Var x, Var shift, Var scale) {
    return tape.add_row(tape.mul_row(x, tape.add_scalar(scale, 1.0)), shift);
}

}  // namespace

JointModel::StreamParams JointModel::build_stream(const std::string& prefix, const StreamConfig& sc, int patch_dim,
                                                  int patches, Rng& rng) {
    const int h = sc.hidden;
    const int f = m_config.time_features;
    auto& p = m_params;
    StreamParams sp;
    sp.in_w = p.add(prefix + ".in.w", glorot(patch_dim, h, rng));
    sp.in_b = p.add(prefix + ".in.b", Matrix::Zero(1, h));
    sp.pos = p.add(prefix + ".pos", uniform_matrix(patches, h, 0.035, rng));
    sp.time1_w = p.add(prefix + ".time.1.w", glorot(f, h, rng));
    sp.time1_b = p.add(prefix + ".time.1.b", Matrix::Zero(1, h));
    sp.time2_w = p.add(prefix + ".time.2.w", glorot(h, h, rng));
    sp.time2_b = p.add(prefix + ".time.2.b", Matrix::Zero(1, h));
    sp.label = p.add(prefix + ".label", uniform_matrix(m_config.num_conditions + 1, h, 0.1, rng));
    for (int b = 0; b < sc.blocks; ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b);
        BlockParams blk;
        blk.mod_w = p.add(bp + ".mod.w", uniform_matrix(h, 6 * h, 0.02, rng));
        Matrix mod_b = Matrix::Zero(1, 6 * h);
        // Gates start open: [shift1, scale1, gate1, shift2, scale2, gate2].
        mod_b.middleCols(2 * h, h).setOnes();
        mod_b.middleCols(5 * h, h).setOnes();
        blk.mod_b = p.add(bp + ".mod.b", mod_b);
        blk.attn.qkv_w = p.add(bp + ".attn.qkv.w", glorot(h, 3 * h, rng));
        blk.attn.qkv_b = p.add(bp + ".attn.qkv.b", Matrix::Zero(1, 3 * h));
        blk.attn.out_w = p.add(bp + ".attn.out.w", glorot(h, h, rng) * (1.0 / std::sqrt(2.0 * sc.blocks)));
        blk.attn.out_b = p.add(bp + ".attn.out.b", Matrix::Zero(1, h));
        blk.mlp1_w = p.add(bp + ".mlp.1.w", glorot(h, sc.mlp_ratio * h, rng));
        blk.mlp1_b = p.add(bp + ".mlp.1.b", Matrix::Zero(1, sc.mlp_ratio * h));
        blk.mlp2_w =
            p.add(bp + ".mlp.2.w", glorot(sc.mlp_ratio * h, h, rng) * (1.0 / std::sqrt(2.0 * sc.blocks)));
        blk.mlp2_b = p.add(bp + ".mlp.2.b", Matrix::Zero(1, h));
        sp.blocks.push_back(blk);
    }
    sp.final_mod_w = p.add(prefix + ".final.mod.w", uniform_matrix(h, 2 * h, 0.02, rng));
    sp.final_mod_b = p.add(prefix + ".final.mod.b", Matrix::Zero(1, 2 * h));
    sp.out_w = p.add(prefix + ".out.w", glorot(h, patch_dim, rng) * 0.1);
    sp.out_b = p.add(prefix + ".out.b", Matrix::Zero(1, patch_dim));
    // Time-modulated elementwise path from input tokens to outputs, so
    // narrow streams can still pass full-rank noise through.
    sp.skip_w = p.add(prefix + ".skip.w", uniform_matrix(h, patch_dim, 0.02, rng));
    sp.skip_b = p.add(prefix + ".skip.b", Matrix::Zero(1, patch_dim));
    return sp;
}

JointModel::CrossParams JointModel::build_cross(const std::string& prefix, int receiver, int sender, Rng& rng) {
    auto& p = m_params;
    CrossParams cp;
    cp.q_w = p.add(prefix + ".q.w", glorot(receiver, receiver, rng));
    cp.k_w = p.add(prefix + ".k.w", glorot(sender, receiver, rng));
    cp.v_w = p.add(prefix + ".v.w", glorot(sender, receiver, rng));
    // Zero output projection: streams start disconnected.
    cp.out_w = p.add(prefix + ".out.w", Matrix::Zero(receiver, receiver));
    cp.out_b = p.add(prefix + ".out.b", Matrix::Zero(1, receiver));
    return cp;
}

JointModel::JointModel(DualStreamConfig config, std::uint64_t seed) : m_config(std::move(config)) {
    m_config.validate();
    Rng rng(seed);
    const auto& c = m_config;
    const int image_patches = (c.image_height / c.image.patch_h) * (c.image_width / c.image.patch_w);
    const int pose_patches = (c.ray_height / c.pose.patch_h) * (c.ray_width / c.pose.patch_w);
    Rng image_rng = rng.split(1);
    Rng pose_rng = rng.split(2);
    Rng comm_rng = rng.split(3);
    m_image = build_stream("image", c.image, c.image.patch_h * c.image.patch_w * c.image_channels, image_patches,
                           image_rng);
    m_pose = build_stream("pose", c.pose, c.pose.patch_h * c.pose.patch_w * 6, pose_patches, pose_rng);
    m_pairs = c.communication_pairs();
    for (std::size_t k = 0; k < m_pairs.size(); ++k) {
        const std::string prefix = "comm" + std::to_string(k);
        CommParams cp;
        cp.to_ray = build_cross(prefix + ".to_ray", c.pose.hidden, c.image.hidden, comm_rng);
        cp.to_image = build_cross(prefix + ".to_image", c.image.hidden, c.pose.hidden, comm_rng);
        m_comm.push_back(cp);
    }
}

void JointModel::check_state(const JointState& s) const {
    const auto& c = m_config;
    RFSPLAT_CHECK(s.image.views == c.views && s.image.height == c.image_height && s.image.width == c.image_width &&
                      s.image.channels == c.image_channels,
                  ErrorCode::ShapeMismatch, "image latents do not match the model configuration");
    RFSPLAT_CHECK(s.rays.views == c.views && s.rays.height == c.ray_height && s.rays.width == c.ray_width &&
                      s.rays.channels == 6,
                  ErrorCode::ShapeMismatch, "rays do not match the model configuration");
    RFSPLAT_CHECK(s.t_image >= 0.0 && s.t_image <= 1.0 && s.t_ray >= 0.0 && s.t_ray <= 1.0,
                  ErrorCode::InvalidArgument, "timesteps must lie in [0, 1]");
    RFSPLAT_CHECK(s.condition >= 0 && s.condition <= c.num_conditions, ErrorCode::InvalidArgument,
                  "condition id out of range");
}

JointModel::StreamRun JointModel::begin_stream(Tape& tape, const StreamParams& sp, const StreamConfig& sc,
                                               const ViewTensor& x, double t, int condition) const {
    const auto& p = m_params;
    Matrix token_values = patchify(x, sc.patch_h, sc.patch_w);
    const int per_view = static_cast<int>(token_values.rows()) / x.views;
    Var tokens = tape.constant(std::move(token_values));

    Var h = tape.add_row(tape.matmul(tokens, tape.parameter(p, sp.in_w)), tape.parameter(p, sp.in_b));
    std::vector<int> pos_rows;
    pos_rows.reserve(static_cast<std::size_t>(x.views) * per_view);
    for (int v = 0; v < x.views; ++v)
        for (int i = 0; i < per_view; ++i)
            pos_rows.push_back(i);
    h = tape.add(h, tape.gather_rows(tape.parameter(p, sp.pos), std::move(pos_rows)));
    if (m_config.view_encoding) {
        Matrix code(static_cast<Eigen::Index>(x.views) * per_view, sc.hidden);
        for (int v = 0; v < x.views; ++v) {
            Matrix f = sinusoidal_features(static_cast<double>(v), sc.hidden, 1.0);
            for (int i = 0; i < per_view; ++i)
                code.row(static_cast<Eigen::Index>(v) * per_view + i) = f.row(0);
        }
        h = tape.add(h, tape.constant(std::move(code)));
    }

    Var feat = tape.constant(sinusoidal_features(t, m_config.time_features));
    Var temb = tape.add_row(tape.matmul(feat, tape.parameter(p, sp.time1_w)), tape.parameter(p, sp.time1_b));
    temb = tape.add_row(tape.matmul(tape.silu(temb), tape.parameter(p, sp.time2_w)), tape.parameter(p, sp.time2_b));
    Var label = tape.gather_rows(tape.parameter(p, sp.label), {condition});
    return {h, tape.add(temb, label), temb, tokens};
}

Var JointModel::run_block(Tape& tape, const BlockParams& bp, const StreamConfig& sc, Var h, Var cond) const {
    const auto& p = m_params;
    const int hid = sc.hidden;
    Var mod = tape.add_row(tape.matmul(tape.silu(cond), tape.parameter(p, bp.mod_w)), tape.parameter(p, bp.mod_b));
    Var shift1 = tape.slice_cols(mod, 0, hid);
    Var scale1 = tape.slice_cols(mod, hid, hid);
    Var gate1 = tape.slice_cols(mod, 2 * hid, hid);
    Var shift2 = tape.slice_cols(mod, 3 * hid, hid);
    Var scale2 = tape.slice_cols(mod, 4 * hid, hid);
    Var gate2 = tape.slice_cols(mod, 5 * hid, hid);

    Var x = modulate(tape, tape.layer_norm_rows(h), shift1, scale1);
    Var qkv = tape.add_row(tape.matmul(x, tape.parameter(p, bp.attn.qkv_w)), tape.parameter(p, bp.attn.qkv_b));
    Var a = attention(tape, tape.slice_cols(qkv, 0, hid), tape.slice_cols(qkv, hid, hid),
                      tape.slice_cols(qkv, 2 * hid, hid), sc.heads);
    a = tape.add_row(tape.matmul(a, tape.parameter(p, bp.attn.out_w)), tape.parameter(p, bp.attn.out_b));
    h = tape.add(h, tape.mul_row(a, gate1));

    Var y = modulate(tape, tape.layer_norm_rows(h), shift2, scale2);
    y = tape.silu(tape.add_row(tape.matmul(y, tape.parameter(p, bp.mlp1_w)), tape.parameter(p, bp.mlp1_b)));
    y = tape.add_row(tape.matmul(y, tape.parameter(p, bp.mlp2_w)), tape.parameter(p, bp.mlp2_b));
    return tape.add(h, tape.mul_row(y, gate2));
}

Var JointModel::finish_stream(Tape& tape, const StreamParams& sp, const StreamRun& run, Var h) const {
    const auto& p = m_params;
    const int hid = static_cast<int>(tape.value(h).cols());
    Var act = tape.silu(run.cond);
    Var mod = tape.add_row(tape.matmul(act, tape.parameter(p, sp.final_mod_w)), tape.parameter(p, sp.final_mod_b));
    Var x = modulate(tape, tape.layer_norm_rows(h), tape.slice_cols(mod, 0, hid), tape.slice_cols(mod, hid, hid));
    Var out = tape.add_row(tape.matmul(x, tape.parameter(p, sp.out_w)), tape.parameter(p, sp.out_b));
    Var skip = tape.add_row(tape.matmul(act, tape.parameter(p, sp.skip_w)), tape.parameter(p, sp.skip_b));
    return tape.add(out, tape.mul_row(run.tokens, skip));
}

Var JointModel::cross_update(Tape& tape, const CrossParams& cp, int heads, Var receiver, Var sender,
                             Var sender_time) const {
    const auto& p = m_params;
    Var q = tape.matmul(tape.layer_norm_rows(receiver), tape.parameter(p, cp.q_w));
    std::vector<Var> parts{sender_time, sender};
    Var kv = tape.layer_norm_rows(tape.concat_rows(parts));
    Var k = tape.matmul(kv, tape.parameter(p, cp.k_w));
    Var v = tape.matmul(kv, tape.parameter(p, cp.v_w));
    Var o = attention(tape, q, k, v, heads);
    return tape.add_row(tape.matmul(o, tape.parameter(p, cp.out_w)), tape.parameter(p, cp.out_b));
}

std::pair<Var, Var> JointModel::communicate(Tape& tape, int pair_index, Var h_ray, Var h_image, Var t_ray_emb,
                                            Var t_image_emb) const {
    RFSPLAT_CHECK(pair_index >= 0 && pair_index < static_cast<int>(m_comm.size()), ErrorCode::InvalidArgument,
                  "communication pair out of range");
    RFSPLAT_CHECK(tape.value(h_ray).cols() == m_config.pose.hidden &&
                      tape.value(h_image).cols() == m_config.image.hidden &&
                      tape.value(t_ray_emb).cols() == m_config.pose.hidden &&
                      tape.value(t_image_emb).cols() == m_config.image.hidden,
                  ErrorCode::ShapeMismatch, "communication inputs do not match stream widths");
    const auto& cp = m_comm[static_cast<std::size_t>(pair_index)];
    Var ray_update = cross_update(tape, cp.to_ray, m_config.pose.heads, h_ray, h_image, t_image_emb);
    Var image_update = cross_update(tape, cp.to_image, m_config.image.heads, h_image, h_ray, t_ray_emb);
    return {tape.add(h_ray, ray_update), tape.add(h_image, image_update)};
}

JointModel::TapeOutput JointModel::forward(Tape& tape, const JointState& state, bool communication) const {
    check_state(state);
    const auto& c = m_config;
    StreamRun image = begin_stream(tape, m_image, c.image, state.image, state.t_image, state.condition);
    StreamRun pose = begin_stream(tape, m_pose, c.pose, state.rays, state.t_ray, state.condition);
    Var hi = image.hidden;
    Var hr = pose.hidden;
    int next_image = 0;
    int next_pose = 0;
    for (std::size_t k = 0; k < m_pairs.size(); ++k) {
        const auto& pair = m_pairs[k];
        while (next_image <= pair.image_block)
            hi = run_block(tape, m_image.blocks[static_cast<std::size_t>(next_image++)], c.image, hi, image.cond);
        while (next_pose <= pair.pose_block)
            hr = run_block(tape, m_pose.blocks[static_cast<std::size_t>(next_pose++)], c.pose, hr, pose.cond);
        if (communication)
            std::tie(hr, hi) = communicate(tape, static_cast<int>(k), hr, hi, pose.time_emb, image.time_emb);
    }
    while (next_image < c.image.blocks)
        hi = run_block(tape, m_image.blocks[static_cast<std::size_t>(next_image++)], c.image, hi, image.cond);
    while (next_pose < c.pose.blocks)
        hr = run_block(tape, m_pose.blocks[static_cast<std::size_t>(next_pose++)], c.pose, hr, pose.cond);
    return {finish_stream(tape, m_image, image, hi), finish_stream(tape, m_pose, pose, hr)};
}

FieldPrediction JointModel::forward(const JointState& state, bool communication) const {
    Tape tape(false);
    TapeOutput out = forward(tape, state, communication);
    const auto& c = m_config;
    FieldPrediction pred{unpatchify(tape.value(out.image), c.views, c.image_height, c.image_width, c.image_channels,
                                    c.image.patch_h, c.image.patch_w),
                         unpatchify(tape.value(out.rays), c.views, c.ray_height, c.ray_width, 6, c.pose.patch_h,
                                    c.pose.patch_w)};
    if (!pred.image.all_finite() || !pred.rays.all_finite())
        throw Error(ErrorCode::NonFiniteField, "joint model output");
    return pred;
}

JointLoss joint_loss(const JointModel& model, std::span<const JointExample> batch, std::span<const JointNoise> noise,
                     std::span<const double> t_image, std::span<const double> t_ray, nn::ParameterSet* grads) {
    RFSPLAT_CHECK(!batch.empty(), ErrorCode::InvalidArgument, "empty batch");
    RFSPLAT_CHECK(noise.size() == batch.size() && t_image.size() == batch.size() && t_ray.size() == batch.size(),
                  ErrorCode::ShapeMismatch, "batch inputs differ in length");
    const auto& c = model.config();
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    JointLoss out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& ex = batch[i];
        JointState state;
        state.image = axpby(t_image[i], noise[i].image, 1.0 - t_image[i], ex.image);
        state.rays = axpby(t_ray[i], noise[i].rays, 1.0 - t_ray[i], ex.rays);
        state.t_image = t_image[i];
        state.t_ray = t_ray[i];
        state.condition = ex.condition;
        Matrix target_image = patchify(axpby(1.0, noise[i].image, -1.0, ex.image), c.image.patch_h, c.image.patch_w);
        Matrix target_rays = patchify(axpby(1.0, noise[i].rays, -1.0, ex.rays), c.pose.patch_h, c.pose.patch_w);

        Tape tape(grads != nullptr);
        auto pred = model.forward(tape, state);
        Var li = tape.mse(pred.image, target_image);
        Var lr = tape.mse(pred.rays, target_rays);
        Var total = tape.scale(tape.add(li, lr), 0.5 * inv_batch);
        const double vi = tape.value(li)(0, 0);
        const double vr = tape.value(lr)(0, 0);
        if (!std::isfinite(vi) || !std::isfinite(vr))
            throw Error(ErrorCode::TrainingDiverged, "non-finite loss at batch element " + std::to_string(i));
        out.image += inv_batch * vi;
        out.ray += inv_batch * vr;
        out.total += tape.value(total)(0, 0);
        if (grads) {
            tape.backward(total);
            tape.accumulate_gradients(*grads);
        }
    }
    return out;
}

std::vector<TrainLogEntry> train(JointModel& model, std::span<const JointExample> dataset, const TrainConfig& config,
                                 std::uint64_t seed) {
    RFSPLAT_CHECK(!dataset.empty(), ErrorCode::InvalidArgument, "empty training set");
    RFSPLAT_CHECK(config.batch > 0 && config.steps >= 0, ErrorCode::InvalidConfig, "invalid training config");
    const auto& c = model.config();
    nn::Adam opt(model.params(), {config.learning_rate, 0.9, 0.999, 1e-8, config.clip_norm});
    nn::ParameterSet grads = model.params().zeros_like();
    const Rng root(seed);
    std::vector<TrainLogEntry> log;
    log.reserve(static_cast<std::size_t>(config.steps));
    for (int step = 0; step < config.steps; ++step) {
        Rng rng = root.split(static_cast<std::uint64_t>(step));
        std::vector<JointExample> batch;
        std::vector<JointNoise> noise;
        std::vector<double> ti, tr;
        for (int b = 0; b < config.batch; ++b) {
            JointExample ex = dataset[rng.below(dataset.size())];
            if (rng.uniform() < config.condition_dropout)
                ex.condition = c.null_condition();
            noise.push_back({ViewTensor::normal(c.views, c.image_height, c.image_width, c.image_channels, rng),
                             ViewTensor::normal(c.views, c.ray_height, c.ray_width, 6, rng)});
            ti.push_back(rng.uniform());
            tr.push_back(rng.uniform());
            batch.push_back(std::move(ex));
        }
        grads.set_zero();
        JointLoss loss;
        try {
            loss = joint_loss(model, batch, noise, ti, tr, &grads);
        } catch (const Error& e) {
            throw Error(ErrorCode::TrainingDiverged, e.what(), step);
        }
        if (!std::isfinite(loss.total))
            throw Error(ErrorCode::TrainingDiverged, "non-finite loss", step);
        opt.step(model.params(), grads);
        log.push_back({step, loss.total, loss.image, loss.ray});
    }
    return log;
}

}  // namespace rfsplat::joint
