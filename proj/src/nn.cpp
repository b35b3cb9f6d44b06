// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/nn.hpp"

#include "rfsplat/error.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace rfsplat::nn {

int ParameterSet::add(const std::string& name, Matrix value) {
    RFSPLAT_CHECK(!contains(name), ErrorCode::InvalidArgument, "duplicate parameter " + name);
    m_lookup.emplace(name, size());
    m_names.push_back(name);
    m_values.push_back(std::move(value));
    return size() - 1;
}

int ParameterSet::index(const std::string& name) const {
    auto it = m_lookup.find(name);
    if (it == m_lookup.end())
        throw Error(ErrorCode::InvalidArgument, "unknown parameter " + name);
    return it->second;
}

Eigen::Index ParameterSet::total_size() const {
    Eigen::Index n = 0;
    for (const auto& v : m_values)
        n += v.size();
    return n;
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet out;
    for (int i = 0; i < size(); ++i)
        out.add(m_names[static_cast<std::size_t>(i)], Matrix::Zero((*this)[i].rows(), (*this)[i].cols()));
    return out;
}

void ParameterSet::set_zero() {
    for (auto& v : m_values)
        v.setZero();
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
    if (size() != other.size())
        return false;
    for (int i = 0; i < size(); ++i)
        if (name(i) != other.name(i) || (*this)[i].rows() != other[i].rows() || (*this)[i].cols() != other[i].cols())
            return false;
    return true;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
    if (!same_layout(other))
        return false;
    for (int i = 0; i < size(); ++i)
        if ((*this)[i] != other[i])
            return false;
    return true;
}

void ParameterSet::save(const std::filesystem::path& path) const {
    std::ofstream bin(path, std::ios::binary);
    std::ofstream manifest(path.string() + ".manifest");
    if (!bin || !manifest)
        throw Error(ErrorCode::Io, "cannot write checkpoint " + path.string());
    std::size_t offset = 0;
    for (int i = 0; i < size(); ++i) {
        const Matrix& m = (*this)[i];
        manifest << name(i) << ' ' << m.rows() << ' ' << m.cols() << ' ' << offset << '\n';
        bin.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        offset += static_cast<std::size_t>(m.size()) * sizeof(double);
    }
    if (!bin || !manifest)
        throw Error(ErrorCode::Io, "failed writing checkpoint " + path.string());
}

void ParameterSet::load(const std::filesystem::path& path) {
    std::ifstream bin(path, std::ios::binary);
    std::ifstream manifest(path.string() + ".manifest");
    if (!bin || !manifest)
        throw Error(ErrorCode::CheckpointNotFound, path.string());
    std::string line;
    int seen = 0;
    while (std::getline(manifest, line)) {
        if (line.empty())
            continue;
        std::istringstream ls(line);
        std::string nm;
        Eigen::Index rows = 0, cols = 0;
        std::size_t offset = 0;
        if (!(ls >> nm >> rows >> cols >> offset))
            throw Error(ErrorCode::Io, "malformed manifest line: " + line);
        Matrix& m = (*this)[nm];
        if (m.rows() != rows || m.cols() != cols)
            throw Error(ErrorCode::ShapeMismatch, "checkpoint shape differs for " + nm);
        bin.seekg(static_cast<std::streamoff>(offset));
        bin.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!bin)
            throw Error(ErrorCode::Io, "truncated checkpoint data for " + nm);
        ++seen;
    }
    if (seen != size())
        throw Error(ErrorCode::ShapeMismatch, "checkpoint does not cover every parameter");
}

Var Tape::push(Matrix value, std::function<void()> back) {
    Node node;
    node.value = std::move(value);
    if (m_record)
        node.back = std::move(back);
    m_nodes.push_back(std::move(node));
    return Var{static_cast<int>(m_nodes.size()) - 1};
}

const Matrix& Tape::val(int id) const {
    const Node& n = m_nodes[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
}

const Matrix& Tape::value(Var v) const { return val(v.id); }

Matrix& Tape::grad_of(int id) {
    Node& n = m_nodes[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
        const Matrix& v = val(id);
        n.grad = Matrix::Zero(v.rows(), v.cols());
    }
    return n.grad;
}

Var Tape::constant(Matrix value) { return push(std::move(value), nullptr); }

Var Tape::parameter(const ParameterSet& params, int index) {
    Node node;
    node.external = &params[index];
    node.owner = &params;
    node.param = index;
    m_nodes.push_back(std::move(node));
    return Var{static_cast<int>(m_nodes.size()) - 1};
}

Var Tape::matmul(Var a, Var b) {
    RFSPLAT_CHECK(val(a.id).cols() == val(b.id).rows(), ErrorCode::ShapeMismatch, "matmul inner dimensions");
    Matrix out = val(a.id) * val(b.id);
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, b, self] {
        const Matrix& g = gout(self);
        grad_of(a.id).noalias() += g * val(b.id).transpose();
        grad_of(b.id).noalias() += val(a.id).transpose() * g;
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    RFSPLAT_CHECK(val(a.id).cols() == val(b.id).cols(), ErrorCode::ShapeMismatch, "matmul_nt inner dimensions");
    Matrix out = val(a.id) * val(b.id).transpose();
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, b, self] {
        const Matrix& g = gout(self);
        grad_of(a.id).noalias() += g * val(b.id);
        grad_of(b.id).noalias() += g.transpose() * val(a.id);
    });
}

Var Tape::add(Var a, Var b) {
    RFSPLAT_CHECK(val(a.id).rows() == val(b.id).rows() && val(a.id).cols() == val(b.id).cols(),
                  ErrorCode::ShapeMismatch, "add shapes");
    Matrix out = val(a.id) + val(b.id);
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, b, self] {
        grad_of(a.id) += gout(self);
        grad_of(b.id) += gout(self);
    });
}

Var Tape::sub(Var a, Var b) {
    RFSPLAT_CHECK(val(a.id).rows() == val(b.id).rows() && val(a.id).cols() == val(b.id).cols(),
                  ErrorCode::ShapeMismatch, "sub shapes");
    Matrix out = val(a.id) - val(b.id);
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, b, self] {
        grad_of(a.id) += gout(self);
        grad_of(b.id) -= gout(self);
    });
}

Var Tape::add_row(Var a, Var row) {
    RFSPLAT_CHECK(val(row.id).rows() == 1 && val(row.id).cols() == val(a.id).cols(), ErrorCode::ShapeMismatch,
                  "add_row shapes");
    Matrix out = val(a.id).rowwise() + val(row.id).row(0);
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, row, self] {
        grad_of(a.id) += gout(self);
        grad_of(row.id) += gout(self).colwise().sum();
    });
}

Var Tape::mul(Var a, Var b) {
    RFSPLAT_CHECK(val(a.id).rows() == val(b.id).rows() && val(a.id).cols() == val(b.id).cols(),
                  ErrorCode::ShapeMismatch, "mul shapes");
    Matrix out = val(a.id).cwiseProduct(val(b.id));
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, b, self] {
        grad_of(a.id) += gout(self).cwiseProduct(val(b.id));
        grad_of(b.id) += gout(self).cwiseProduct(val(a.id));
    });
}

Var Tape::mul_row(Var a, Var row) {
    RFSPLAT_CHECK(val(row.id).rows() == 1 && val(row.id).cols() == val(a.id).cols(), ErrorCode::ShapeMismatch,
                  "mul_row shapes");
    Matrix out = val(a.id).array().rowwise() * val(row.id).row(0).array();
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, row, self] {
        const Matrix& g = gout(self);
        grad_of(a.id) += Matrix(g.array().rowwise() * val(row.id).row(0).array());
        grad_of(row.id) += g.cwiseProduct(val(a.id)).colwise().sum();
    });
}

Var Tape::scale(Var a, double s) {
    Matrix out = s * val(a.id);
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, s, self] { grad_of(a.id) += s * gout(self); });
}

Var Tape::add_scalar(Var a, double s) {
    Matrix out = val(a.id).array() + s;
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, self] { grad_of(a.id) += gout(self); });
}

Var Tape::silu(Var a) {
    const Matrix& x = val(a.id);
    Matrix sig = (1.0 + (-x.array()).exp()).inverse().matrix();
    Matrix out = x.cwiseProduct(sig);
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, self, sig = std::move(sig)] {
        const Matrix& x = val(a.id);
        grad_of(a.id) +=
            Matrix(gout(self).array() * (sig.array() * (1.0 + x.array() * (1.0 - sig.array()))));
    });
}

Var Tape::softmax_rows(Var a) {
    const Matrix& x = val(a.id);
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mx = x.row(r).maxCoeff();
        out.row(r) = (x.row(r).array() - mx).exp();
        out.row(r) /= out.row(r).sum();
    }
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, self] {
        const Matrix& y = val(self);
        const Matrix& g = gout(self);
        Matrix& ga = grad_of(a.id);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            double dot = g.row(r).dot(y.row(r));
            ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
        }
    });
}

Var Tape::layer_norm_rows(Var a, double eps) {
    const Matrix& x = val(a.id);
    const double n = static_cast<double>(x.cols());
    Matrix out(x.rows(), x.cols());
    Eigen::VectorXd inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mean = x.row(r).mean();
        double var = (x.row(r).array() - mean).square().sum() / n;
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        out.row(r) = (x.row(r).array() - mean) * inv_std(r);
    }
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, self, n, inv_std = std::move(inv_std)] {
        const Matrix& y = val(self);
        const Matrix& g = gout(self);
        Matrix& ga = grad_of(a.id);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            double gm = g.row(r).mean();
            double gy = g.row(r).dot(y.row(r)) / n;
            ga.row(r).array() += inv_std(r) * (g.row(r).array() - gm - y.row(r).array() * gy);
        }
    });
}

Var Tape::concat_rows(std::span<const Var> parts) {
    RFSPLAT_CHECK(!parts.empty(), ErrorCode::InvalidArgument, "concat of nothing");
    Eigen::Index rows = 0, cols = val(parts[0].id).cols();
    for (Var p : parts) {
        RFSPLAT_CHECK(val(p.id).cols() == cols, ErrorCode::ShapeMismatch, "concat_rows widths");
        rows += val(p.id).rows();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        out.middleRows(at, val(p.id).rows()) = val(p.id);
        at += val(p.id).rows();
    }
    int self = static_cast<int>(m_nodes.size());
    std::vector<Var> ids(parts.begin(), parts.end());
    return push(std::move(out), [this, ids = std::move(ids), self] {
        Eigen::Index at = 0;
        for (Var p : ids) {
            Eigen::Index r = val(p.id).rows();
            grad_of(p.id) += gout(self).middleRows(at, r);
            at += r;
        }
    });
}

Var Tape::concat_cols(std::span<const Var> parts) {
    RFSPLAT_CHECK(!parts.empty(), ErrorCode::InvalidArgument, "concat of nothing");
    Eigen::Index cols = 0, rows = val(parts[0].id).rows();
    for (Var p : parts) {
        RFSPLAT_CHECK(val(p.id).rows() == rows, ErrorCode::ShapeMismatch, "concat_cols heights");
        cols += val(p.id).cols();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        out.middleCols(at, val(p.id).cols()) = val(p.id);
        at += val(p.id).cols();
    }
    int self = static_cast<int>(m_nodes.size());
    std::vector<Var> ids(parts.begin(), parts.end());
    return push(std::move(out), [this, ids = std::move(ids), self] {
        Eigen::Index at = 0;
        for (Var p : ids) {
            Eigen::Index c = val(p.id).cols();
            grad_of(p.id) += gout(self).middleCols(at, c);
            at += c;
        }
    });
}

Var Tape::slice_rows(Var a, int start, int count) {
    RFSPLAT_CHECK(start >= 0 && count >= 0 && start + count <= val(a.id).rows(), ErrorCode::ShapeMismatch,
                  "slice_rows range");
    Matrix out = val(a.id).middleRows(start, count);
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out),
                [this, a, start, count, self] { grad_of(a.id).middleRows(start, count) += gout(self); });
}

Var Tape::slice_cols(Var a, int start, int count) {
    RFSPLAT_CHECK(start >= 0 && count >= 0 && start + count <= val(a.id).cols(), ErrorCode::ShapeMismatch,
                  "slice_cols range");
    Matrix out = val(a.id).middleCols(start, count);
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out),
                [this, a, start, count, self] { grad_of(a.id).middleCols(start, count) += gout(self); });
}

Var Tape::gather_rows(Var a, std::vector<int> rows) {
    const Matrix& x = val(a.id);
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        RFSPLAT_CHECK(rows[i] >= 0 && rows[i] < x.rows(), ErrorCode::ShapeMismatch, "gather index out of range");
        out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    }
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, rows = std::move(rows), self] {
        Matrix& ga = grad_of(a.id);
        const Matrix& g = gout(self);
        for (std::size_t i = 0; i < rows.size(); ++i)
            ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

Var Tape::mse(Var a, const Matrix& target) {
    const Matrix& x = val(a.id);
    RFSPLAT_CHECK(x.rows() == target.rows() && x.cols() == target.cols(), ErrorCode::ShapeMismatch, "mse shapes");
    Matrix diff = x - target;
    Matrix out(1, 1);
    out(0, 0) = diff.squaredNorm() / static_cast<double>(diff.size());
    int self = static_cast<int>(m_nodes.size());
    return push(std::move(out), [this, a, self, diff = std::move(diff)] {
        grad_of(a.id) += (2.0 * gout(self)(0, 0) / static_cast<double>(diff.size())) * diff;
    });
}

void Tape::backward(Var root) {
    Matrix seed = Matrix::Ones(val(root.id).rows(), val(root.id).cols());
    backward(root, seed);
}

void Tape::backward(Var root, const Matrix& seed) {
    RFSPLAT_CHECK(m_record, ErrorCode::InvalidArgument, "tape was created without gradient recording");
    grad_of(root.id) += seed;
    for (int i = root.id; i >= 0; --i) {
        Node& n = m_nodes[static_cast<std::size_t>(i)];
        if (n.back && n.grad.size() != 0)
            n.back();
    }
}

void Tape::accumulate_gradients(ParameterSet& grads) const {
    for (const Node& n : m_nodes) {
        if (n.param >= 0 && n.grad.size() != 0)
            grads[n.param] += n.grad;
    }
}

Adam::Adam(const ParameterSet& layout, AdamOptions options)
    : m_options(options), m_first(layout.zeros_like()), m_second(layout.zeros_like()) {}

void Adam::step(ParameterSet& params, const ParameterSet& grads) {
    RFSPLAT_CHECK(params.same_layout(grads) && params.same_layout(m_first), ErrorCode::ShapeMismatch,
                  "optimizer layout mismatch");
    ++m_step;
    double clip = 1.0;
    if (m_options.clip_norm > 0.0) {
        double sq = 0.0;
        for (int i = 0; i < grads.size(); ++i)
            sq += grads[i].squaredNorm();
        double norm = std::sqrt(sq);
        if (norm > m_options.clip_norm)
            clip = m_options.clip_norm / norm;
    }
    const double c1 = 1.0 - std::pow(m_options.beta1, static_cast<double>(m_step));
    const double c2 = 1.0 - std::pow(m_options.beta2, static_cast<double>(m_step));
    for (int i = 0; i < params.size(); ++i) {
        Matrix g = clip * grads[i];
        m_first[i] = m_options.beta1 * m_first[i] + (1.0 - m_options.beta1) * g;
        m_second[i] = m_options.beta2 * m_second[i] + (1.0 - m_options.beta2) * g.cwiseProduct(g);
        const Eigen::ArrayXXd denom = (m_second[i].array() / c2).sqrt() + m_options.epsilon;
        // A coordinate that has never seen a gradient stays put, even with epsilon = 0.
        params[i].array() -= m_options.learning_rate *
                             (denom > 0.0).select((m_first[i].array() / c1) / denom, 0.0);
    }
}

Matrix glorot(int rows, int cols, const std::function<double()>& uniform01) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = limit * (2.0 * uniform01() - 1.0);
    return m;
}

}  // namespace rfsplat::nn
