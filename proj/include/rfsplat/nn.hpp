// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

// Minimal reverse-mode differentiation over row-major matrices. Rows are
// tokens (or pixels), columns are features.
namespace rfsplat::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Named tensors in insertion order.
class ParameterSet {
public:
    int add(const std::string& name, Matrix value);
    int index(const std::string& name) const;
    bool contains(const std::string& name) const { return m_lookup.count(name) != 0; }

    Matrix& operator[](int i) { return m_values[static_cast<std::size_t>(i)]; }
    const Matrix& operator[](int i) const { return m_values[static_cast<std::size_t>(i)]; }
    Matrix& operator[](const std::string& name) { return (*this)[index(name)]; }
    const Matrix& operator[](const std::string& name) const { return (*this)[index(name)]; }
    const std::string& name(int i) const { return m_names[static_cast<std::size_t>(i)]; }

    int size() const { return static_cast<int>(m_values.size()); }
    Eigen::Index total_size() const;
    ParameterSet zeros_like() const;
    void set_zero();
    bool same_layout(const ParameterSet& other) const;
    bool operator==(const ParameterSet& other) const;

    /// Writes `path` (raw little-endian doubles) and `path.manifest` with one
    /// `name rows cols byte_offset` line per tensor.
    void save(const std::filesystem::path& path) const;
    /// Loads values into an existing layout; names and shapes must match.
    void load(const std::filesystem::path& path);

private:
    std::vector<std::string> m_names;
    std::vector<Matrix> m_values;
    std::unordered_map<std::string, int> m_lookup;
};

struct Var {
    int id = -1;
};

class Tape {
public:
    explicit Tape(bool record = true) : m_record(record) {}

    Var constant(Matrix value);
    /// Leaf bound to a parameter; its gradient is collected by
    /// accumulate_gradients. The parameter set must outlive the tape.
    Var parameter(const ParameterSet& params, int index);
    Var parameter(const ParameterSet& params, const std::string& name) {
        return parameter(params, params.index(name));
    }

    const Matrix& value(Var v) const;
    const Matrix& grad(Var v) const { return m_nodes[static_cast<std::size_t>(v.id)].grad; }

    Var matmul(Var a, Var b);
    /// a * b^T
    Var matmul_nt(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    /// a (n x m) + row (1 x m) broadcast over rows.
    Var add_row(Var a, Var row);
    Var mul(Var a, Var b);
    /// a (n x m) * row (1 x m) broadcast over rows.
    Var mul_row(Var a, Var row);
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var silu(Var a);
    Var softmax_rows(Var a);
    /// Per-row standardization without affine parameters.
    Var layer_norm_rows(Var a, double eps = 1e-6);
    Var concat_rows(std::span<const Var> parts);
    Var concat_cols(std::span<const Var> parts);
    Var slice_rows(Var a, int start, int count);
    Var slice_cols(Var a, int start, int count);
    /// Output row i = a.row(rows[i]).
    Var gather_rows(Var a, std::vector<int> rows);
    /// Mean of squared differences to a constant target, as a 1 x 1 value.
    Var mse(Var a, const Matrix& target);

    void backward(Var root);
    void backward(Var root, const Matrix& seed);
    /// Adds parameter gradients into `grads` (same layout as the bound set).
    void accumulate_gradients(ParameterSet& grads) const;

    std::size_t num_nodes() const { return m_nodes.size(); }

private:
    struct Node {
        Matrix value;
        const Matrix* external = nullptr;
        Matrix grad;
        std::function<void()> back;
        const ParameterSet* owner = nullptr;
        int param = -1;
    };

    Var push(Matrix value, std::function<void()> back);
    Matrix& grad_of(int id);
    const Matrix& val(int id) const;
    const Matrix& gout(int id) const { return m_nodes[static_cast<std::size_t>(id)].grad; }

    std::vector<Node> m_nodes;
    bool m_record;
};

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Global gradient-norm clip; 0 disables.
    double clip_norm = 0.0;
};

class Adam {
public:
    Adam(const ParameterSet& layout, AdamOptions options);
    void step(ParameterSet& params, const ParameterSet& grads);
    long steps() const { return m_step; }
    void set_learning_rate(double lr) { m_options.learning_rate = lr; }
    const AdamOptions& options() const { return m_options; }

private:
    AdamOptions m_options;
    ParameterSet m_first;
    ParameterSet m_second;
    long m_step = 0;
};

/// Xavier-style uniform initialization from a caller-supplied uniform source.
Matrix glorot(int rows, int cols, const std::function<double()>& uniform01);

}  // namespace rfsplat::nn
