#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "mgnni/error.hpp"
#include "mgnni/numerics.hpp"

namespace mgnni {

using Edge = std::pair<std::size_t, std::size_t>;

inline constexpr std::size_t kUnreachable = std::numeric_limits<std::size_t>::max();

/// Node labels: either one class id per node, or a multi-hot (classes x n) matrix.
struct Labels {
    std::vector<int> classes;
    DenseMatrix multi_hot;

    bool is_multi_label() const noexcept { return multi_hot.cols() > 0; }
    bool empty() const noexcept { return classes.empty() && multi_hot.cols() == 0; }

    std::size_t num_classes() const {
        if (is_multi_label()) return multi_hot.rows();
        if (classes.empty()) return 0;
        return static_cast<std::size_t>(*std::max_element(classes.begin(), classes.end())) + 1;
    }

    bool operator==(const Labels&) const = default;
};

/// A graph with raw 0/1 adjacency, its normalized propagation matrix S, and
/// features stored one column per node (features is d x n).
struct Graph {
    std::size_t n = 0;
    CsrMatrix adjacency;
    CsrMatrix s;
    DenseMatrix features;
    Labels labels;
    bool directed = false;
    bool self_loops = false;

    std::size_t feature_dim() const noexcept { return features.rows(); }
};

/// Undirected: D^-1/2 (A + I[self_loops]) D^-1/2.
/// Directed:   D_out^-1/2 (A + I[self_loops]) D_in^-1/2.
/// Zero-degree nodes get factor 0.
inline CsrMatrix normalize(const CsrMatrix& a, bool directed, bool self_loops) {
    if (a.rows() != a.cols())
        throw ShapeError("normalize: adjacency must be square, got " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()));
    const std::size_t n = a.rows();
    std::vector<std::tuple<std::size_t, std::size_t, double>> t;
    t.reserve(a.nnz() + (self_loops ? n : 0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = a.row_ptr()[i]; k < a.row_ptr()[i + 1]; ++k)
            t.emplace_back(i, a.col_idx()[k], a.values()[k]);
    if (self_loops)
        for (std::size_t i = 0; i < n; ++i) t.emplace_back(i, i, 1.0);
    const CsrMatrix m = CsrMatrix::from_triplets(n, n, std::move(t));

    std::vector<double> out_deg(n, 0.0), in_deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = m.row_ptr()[i]; k < m.row_ptr()[i + 1]; ++k) {
            out_deg[i] += m.values()[k];
            in_deg[m.col_idx()[k]] += m.values()[k];
        }
    auto inv_sqrt = [](double d) { return d > 0.0 ? 1.0 / std::sqrt(d) : 0.0; };

    std::vector<double> vals(m.values());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = m.row_ptr()[i]; k < m.row_ptr()[i + 1]; ++k) {
            const std::size_t j = m.col_idx()[k];
            // For undirected input out_deg == in_deg, so one formula covers both.
            vals[k] *= directed ? inv_sqrt(out_deg[i]) * inv_sqrt(in_deg[j])
                                : inv_sqrt(out_deg[i]) * inv_sqrt(out_deg[j]);
        }
    return {n, n, m.row_ptr(), m.col_idx(), std::move(vals)};
}

/// Builds a 0/1 adjacency from an edge list. Duplicate edges collapse; for
/// undirected graphs every edge is mirrored.
inline CsrMatrix adjacency_from_edges(std::size_t n, const std::vector<Edge>& edges, bool directed) {
    std::vector<std::tuple<std::size_t, std::size_t, double>> t;
    t.reserve(edges.size() * (directed ? 1 : 2));
    for (const auto& [u, v] : edges) {
        if (u >= n || v >= n)
            throw ValidationError("edge (" + std::to_string(u) + "," + std::to_string(v) +
                                  ") references a node outside [0," + std::to_string(n) + ")");
        t.emplace_back(u, v, 1.0);
        if (!directed && u != v) t.emplace_back(v, u, 1.0);
    }
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return CsrMatrix::from_triplets(n, n, std::move(t));
}

/// Self-loops default on for undirected graphs and off for directed ones.
inline Graph make_graph(std::size_t n, const std::vector<Edge>& edges, DenseMatrix features, Labels labels,
                        bool directed, std::optional<bool> self_loops = std::nullopt) {
    if (features.cols() != n)
        throw ShapeError("make_graph: features have " + std::to_string(features.cols()) + " columns for " +
                         std::to_string(n) + " nodes");
    if (!labels.classes.empty() && labels.classes.size() != n)
        throw ShapeError("make_graph: label count does not match node count");
    if (labels.is_multi_label() && labels.multi_hot.cols() != n)
        throw ShapeError("make_graph: multi-hot label columns do not match node count");
    Graph g;
    g.n = n;
    g.directed = directed;
    g.self_loops = self_loops.value_or(!directed);
    g.adjacency = adjacency_from_edges(n, edges, directed);
    g.s = normalize(g.adjacency, directed, g.self_loops);
    g.features = std::move(features);
    g.labels = std::move(labels);
    return g;
}

inline std::vector<Edge> edge_list(const Graph& g) {
    std::vector<Edge> e;
    e.reserve(g.adjacency.nnz());
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t k = g.adjacency.row_ptr()[i]; k < g.adjacency.row_ptr()[i + 1]; ++k)
            e.emplace_back(i, g.adjacency.col_idx()[k]);
    return e;
}

/// BFS hop counts from p along edge direction; kUnreachable where no path exists.
inline std::vector<std::size_t> hop_distance(const Graph& g, std::size_t p) {
    if (p >= g.n) throw IndexError("hop_distance: node " + std::to_string(p) + " out of range");
    std::vector<std::size_t> dist(g.n, kUnreachable);
    std::deque<std::size_t> queue{p};
    dist[p] = 0;
    const auto& rp = g.adjacency.row_ptr();
    const auto& ci = g.adjacency.col_idx();
    while (!queue.empty()) {
        const std::size_t u = queue.front();
        queue.pop_front();
        for (std::size_t k = rp[u]; k < rp[u + 1]; ++k) {
            const std::size_t v = ci[k];
            if (dist[v] == kUnreachable) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    return dist;
}

/// Node index lists for a train/validation/test partition.
struct NodeSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;

    bool operator==(const NodeSplit&) const = default;
};

/// Disjoint union of graphs with a per-node graph index.
struct GraphBatch {
    Graph merged;
    std::vector<std::size_t> graph_of_node;
    std::vector<std::size_t> offsets; // first node of each graph, plus a final entry = merged.n
    std::size_t num_graphs = 0;
};

namespace detail {

inline CsrMatrix block_diagonal(const std::vector<const CsrMatrix*>& blocks, std::size_t total) {
    std::vector<std::size_t> rp{0}, ci;
    std::vector<double> vals;
    std::size_t off = 0;
    for (const CsrMatrix* b : blocks) {
        for (std::size_t i = 0; i < b->rows(); ++i) {
            for (std::size_t k = b->row_ptr()[i]; k < b->row_ptr()[i + 1]; ++k) {
                ci.push_back(b->col_idx()[k] + off);
                vals.push_back(b->values()[k]);
            }
            rp.push_back(ci.size());
        }
        off += b->rows();
    }
    return {total, total, std::move(rp), std::move(ci), std::move(vals)};
}

} // namespace detail

/// Block-diagonal merge. Each graph keeps its own normalization.
inline GraphBatch batch(const std::vector<Graph>& graphs) {
    if (graphs.empty()) throw EmptySelectionError("batch: no graphs");
    const std::size_t d = graphs.front().feature_dim();
    GraphBatch out;
    out.num_graphs = graphs.size();
    std::size_t total = 0;
    std::vector<const CsrMatrix*> adj, s;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const Graph& g = graphs[gi];
        if (g.feature_dim() != d)
            throw ShapeError("batch: graph " + std::to_string(gi) + " has feature dim " +
                             std::to_string(g.feature_dim()) + ", expected " + std::to_string(d));
        out.offsets.push_back(total);
        out.graph_of_node.insert(out.graph_of_node.end(), g.n, gi);
        total += g.n;
        adj.push_back(&g.adjacency);
        s.push_back(&g.s);
    }
    out.offsets.push_back(total);

    Graph& m = out.merged;
    m.n = total;
    m.directed = graphs.front().directed;
    m.self_loops = graphs.front().self_loops;
    m.adjacency = detail::block_diagonal(adj, total);
    m.s = detail::block_diagonal(s, total);
    m.features = DenseMatrix(d, total);
    bool single_labels = true;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const Graph& g = graphs[gi];
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < g.n; ++j) m.features(i, out.offsets[gi] + j) = g.features(i, j);
        single_labels = single_labels && g.labels.classes.size() == g.n;
    }
    if (single_labels)
        for (const Graph& g : graphs)
            m.labels.classes.insert(m.labels.classes.end(), g.labels.classes.begin(), g.labels.classes.end());
    return out;
}

/// Inverse of batch(): splits the merged graph back into its blocks.
inline std::vector<Graph> unbatch(const GraphBatch& b) {
    std::vector<Graph> out;
    const Graph& m = b.merged;
    for (std::size_t gi = 0; gi < b.num_graphs; ++gi) {
        const std::size_t lo = b.offsets[gi], hi = b.offsets[gi + 1];
        auto slice = [&](const CsrMatrix& full) {
            std::vector<std::size_t> rp{0}, ci;
            std::vector<double> vals;
            for (std::size_t i = lo; i < hi; ++i) {
                for (std::size_t k = full.row_ptr()[i]; k < full.row_ptr()[i + 1]; ++k) {
                    ci.push_back(full.col_idx()[k] - lo);
                    vals.push_back(full.values()[k]);
                }
                rp.push_back(ci.size());
            }
            return CsrMatrix(hi - lo, hi - lo, std::move(rp), std::move(ci), std::move(vals));
        };
        Graph g;
        g.n = hi - lo;
        g.directed = m.directed;
        g.self_loops = m.self_loops;
        g.adjacency = slice(m.adjacency);
        g.s = slice(m.s);
        g.features = column_slice(m.features, lo, hi);
        if (m.labels.classes.size() == m.n)
            g.labels.classes.assign(m.labels.classes.begin() + static_cast<std::ptrdiff_t>(lo),
                                    m.labels.classes.begin() + static_cast<std::ptrdiff_t>(hi));
        out.push_back(std::move(g));
    }
    return out;
}

} // namespace mgnni
