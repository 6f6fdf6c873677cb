#pragma once

// Synthetic benchmark generators and the on-disk graph format:
//   edges.tsv     one "src<TAB>dst" pair per line, 0-based
//   features.csv  one row per node
//   labels.csv    "node_id,label" or "node_id,b0,b1,..." (multi-hot)
//   split.json    train/val/test index lists plus generator settings

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mgnni/csv.hpp"
#include "mgnni/error.hpp"
#include "mgnni/graph.hpp"
#include "mgnni/random.hpp"

namespace mgnni {

struct Dataset {
    Graph graph;
    NodeSplit split;
};

/// Random 5% / 10% / 85% partition of [0, n).
inline NodeSplit random_split(std::size_t n, std::uint64_t seed, double train_frac = 0.05, double val_frac = 0.10) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    const auto n_val =
        std::min(n - n_train, static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n))));
    NodeSplit s;
    s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

struct ChainsSpec {
    std::size_t num_classes = 2;
    std::size_t chains_per_class = 20;
    std::size_t length = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes < 1 || chains_per_class < 1 || length < 1)
            throw DomainError("ChainsSpec: all counts must be >= 1");
    }
};

/// Directed chains; the class is one-hot encoded only on each chain's first node.
/// Chain c occupies nodes [c*length, (c+1)*length) and has class c / chains_per_class.
inline Dataset gen_chains(const ChainsSpec& spec) {
    spec.validate();
    const std::size_t chains = spec.num_classes * spec.chains_per_class;
    const std::size_t n = chains * spec.length;
    std::vector<Edge> edges;
    edges.reserve(chains * (spec.length - 1));
    DenseMatrix x(spec.num_classes, n);
    Labels labels;
    labels.classes.resize(n);
    for (std::size_t c = 0; c < chains; ++c) {
        const std::size_t start = c * spec.length;
        const auto cls = c / spec.chains_per_class;
        x(cls, start) = 1.0;
        for (std::size_t i = 0; i < spec.length; ++i) {
            labels.classes[start + i] = static_cast<int>(cls);
            if (i + 1 < spec.length) edges.emplace_back(start + i, start + i + 1);
        }
    }
    Dataset d;
    d.graph = make_graph(n, edges, std::move(x), std::move(labels), true, false);
    d.split = random_split(n, spec.seed);
    return d;
}

struct ColorCountingSpec {
    std::size_t num_colors = 3;
    std::size_t num_chains = 30;
    std::size_t length = 30;
    double colored_fraction = 0.3;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_colors < 2) throw DomainError("ColorCountingSpec: num_colors must be >= 2");
        if (num_chains < 1 || length < 1) throw DomainError("ColorCountingSpec: counts must be >= 1");
        if (!(colored_fraction > 0.0 && colored_fraction <= 1.0))
            throw DomainError("ColorCountingSpec: colored_fraction must lie in (0,1]");
    }
};

/// Most frequent color if it is unique, otherwise -1. Entries < 0 are uncolored.
inline int strict_majority_color(const std::vector<int>& colors, std::size_t num_colors) {
    std::vector<std::size_t> count(num_colors, 0);
    for (int c : colors) {
        if (c < 0) continue;
        if (static_cast<std::size_t>(c) >= num_colors)
            throw DomainError("color " + std::to_string(c) + " out of range");
        ++count[static_cast<std::size_t>(c)];
    }
    const auto best = std::max_element(count.begin(), count.end());
    if (*best == 0) return -1;
    if (std::count(count.begin(), count.end(), *best) > 1) return -1;
    return static_cast<int>(best - count.begin());
}

/// Builds the undirected color-counting graph from explicit per-node colors
/// (one vector per chain, -1 for uncolored nodes).
inline Graph color_counting_graph(const std::vector<std::vector<int>>& chain_colors, std::size_t num_colors) {
    std::size_t n = 0;
    for (const auto& c : chain_colors) n += c.size();
    std::vector<Edge> edges;
    DenseMatrix x(num_colors, n);
    Labels labels;
    labels.classes.resize(n);
    std::size_t off = 0;
    for (std::size_t ci = 0; ci < chain_colors.size(); ++ci) {
        const auto& chain = chain_colors[ci];
        const int label = strict_majority_color(chain, num_colors);
        if (label < 0) throw GenerationError("chain " + std::to_string(ci) + " has no strict majority color");
        for (std::size_t i = 0; i < chain.size(); ++i) {
            if (chain[i] >= 0) x(static_cast<std::size_t>(chain[i]), off + i) = 1.0;
            labels.classes[off + i] = label;
            if (i + 1 < chain.size()) edges.emplace_back(off + i, off + i + 1);
        }
        off += chain.size();
    }
    return make_graph(n, edges, std::move(x), std::move(labels), false);
}

/// Chains with a random subset of colored nodes; every node is labeled with
/// its chain's majority color. Chains without a unique majority are resampled.
inline Dataset gen_color_counting(const ColorCountingSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(spec.colored_fraction * static_cast<double>(spec.length))), 1,
        spec.length);
    std::uniform_int_distribution<int> color(0, static_cast<int>(spec.num_colors) - 1);
    std::vector<std::vector<int>> chains;
    std::vector<std::size_t> pos(spec.length);
    for (std::size_t c = 0; c < spec.num_chains; ++c) {
        bool ok = false;
        std::vector<int> chain;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            chain.assign(spec.length, -1);
            std::iota(pos.begin(), pos.end(), std::size_t{0});
            std::shuffle(pos.begin(), pos.end(), rng);
            for (std::size_t j = 0; j < k; ++j) chain[pos[j]] = color(rng);
            ok = strict_majority_color(chain, spec.num_colors) >= 0;
        }
        if (!ok) throw GenerationError("color counting: no strict majority after 1000 resamples");
        chains.push_back(std::move(chain));
    }
    Dataset d;
    d.graph = color_counting_graph(chains, spec.num_colors);
    d.split = random_split(d.graph.n, spec.seed ^ 0x9e3779b97f4a7c15ULL);
    return d;
}

// ---------------------------------------------------------------------------
// File I/O

inline std::vector<Edge> read_edge_list(const std::filesystem::path& path) {
    std::vector<Edge> edges;
    for (const auto& [no, line] : read_lines(path)) {
        if (trim(line).front() == '#') continue;
        std::istringstream ls(line);
        std::string a, b, extra;
        if (!(ls >> a >> b) || (ls >> extra))
            throw ParseError(path.string(), no, "expected 'src<TAB>dst'");
        const long long u = parse_int(a, path.string(), no), v = parse_int(b, path.string(), no);
        if (u < 0 || v < 0) throw ParseError(path.string(), no, "negative node id");
        edges.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
    }
    return edges;
}

/// Reads one row per node and returns the transposed (d x n) matrix.
inline DenseMatrix read_features(const std::filesystem::path& path) {
    std::vector<std::vector<double>> rows;
    for (const auto& [no, line] : read_lines(path)) {
        if (trim(line).front() == '#') continue;
        std::vector<double> r;
        for (auto f : split_fields(line, ',')) r.push_back(parse_double(f, path.string(), no));
        if (!rows.empty() && r.size() != rows.front().size())
            throw ParseError(path.string(), no,
                             "expected " + std::to_string(rows.front().size()) + " fields, got " +
                                 std::to_string(r.size()));
        rows.push_back(std::move(r));
    }
    const std::size_t n = rows.size(), d = n ? rows.front().size() : 0;
    DenseMatrix x(d, n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < d; ++i) x(i, j) = rows[j][i];
    return x;
}

inline Labels read_labels(const std::filesystem::path& path, std::size_t n) {
    std::vector<std::pair<std::size_t, std::vector<double>>> rows;
    std::size_t width = 0;
    for (const auto& [no, line] : read_lines(path)) {
        if (trim(line).front() == '#') continue;
        const auto fields = split_fields(line, ',');
        if (fields.size() < 2) throw ParseError(path.string(), no, "expected 'node_id,label'");
        if (width == 0) width = fields.size();
        if (fields.size() != width) throw ParseError(path.string(), no, "inconsistent field count");
        const long long id = parse_int(fields[0], path.string(), no);
        if (id < 0 || static_cast<std::size_t>(id) >= n)
            throw ValidationError(path.string() + ":" + std::to_string(no) + ": node id " + std::to_string(id) +
                                  " outside [0," + std::to_string(n) + ")");
        std::vector<double> vals;
        for (std::size_t k = 1; k < fields.size(); ++k) vals.push_back(parse_double(fields[k], path.string(), no));
        rows.emplace_back(static_cast<std::size_t>(id), std::move(vals));
    }
    Labels l;
    if (rows.empty()) return l;
    std::vector<bool> seen(n, false);
    if (width == 2) {
        l.classes.assign(n, 0);
        for (const auto& [id, v] : rows) {
            if (v[0] < 0 || v[0] != std::floor(v[0]))
                throw ValidationError(path.string() + ": label for node " + std::to_string(id) +
                                      " is not a class index");
            l.classes[id] = static_cast<int>(v[0]);
            seen[id] = true;
        }
    } else {
        l.multi_hot = DenseMatrix(width - 1, n);
        for (const auto& [id, v] : rows) {
            for (std::size_t c = 0; c < v.size(); ++c) l.multi_hot(c, id) = v[c];
            seen[id] = true;
        }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
        throw ValidationError(path.string() + ": not every node has a label");
    return l;
}

inline Graph load_graph(const std::filesystem::path& edge_path, const std::filesystem::path& feature_path,
                        const std::optional<std::filesystem::path>& label_path, bool directed,
                        std::optional<bool> self_loops = std::nullopt) {
    DenseMatrix x = read_features(feature_path);
    const std::size_t n = x.cols();
    const auto edges = read_edge_list(edge_path);
    for (const auto& [u, v] : edges)
        if (u >= n || v >= n)
            throw ValidationError(edge_path.string() + ": edge (" + std::to_string(u) + "," + std::to_string(v) +
                                  ") references a node without features (n=" + std::to_string(n) + ")");
    Labels labels = label_path ? read_labels(*label_path, n) : Labels{};
    return make_graph(n, edges, std::move(x), std::move(labels), directed, self_loops);
}

inline void save_graph(const Graph& g, const std::filesystem::path& edge_path,
                       const std::filesystem::path& feature_path, const std::filesystem::path& label_path) {
    std::ostringstream e;
    for (const auto& [u, v] : edge_list(g)) e << u << '\t' << v << '\n';
    write_file(edge_path, e.str());

    std::ostringstream f;
    for (std::size_t j = 0; j < g.n; ++j) {
        for (std::size_t i = 0; i < g.feature_dim(); ++i) f << (i ? "," : "") << format_double(g.features(i, j));
        f << '\n';
    }
    write_file(feature_path, f.str());

    std::ostringstream l;
    if (g.labels.is_multi_label()) {
        for (std::size_t j = 0; j < g.n; ++j) {
            l << j;
            for (std::size_t c = 0; c < g.labels.multi_hot.rows(); ++c)
                l << ',' << format_double(g.labels.multi_hot(c, j));
            l << '\n';
        }
    } else {
        for (std::size_t j = 0; j < g.labels.classes.size(); ++j) l << j << ',' << g.labels.classes[j] << '\n';
    }
    write_file(label_path, l.str());
}

inline nlohmann::ordered_json split_to_json(const NodeSplit& s) {
    return {{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

inline NodeSplit split_from_json(const nlohmann::json& j, std::size_t n) {
    NodeSplit s;
    try {
        s.train = j.at("train").get<std::vector<std::size_t>>();
        s.val = j.at("val").get<std::vector<std::size_t>>();
        s.test = j.at("test").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("split: ") + e.what());
    }
    for (const auto* part : {&s.train, &s.val, &s.test})
        for (std::size_t i : *part)
            if (i >= n) throw ValidationError("split: node " + std::to_string(i) + " out of range");
    return s;
}

/// Writes edges.tsv, features.csv, labels.csv and split.json into dir.
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir, const nlohmann::ordered_json& spec) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    save_graph(d.graph, dir / "edges.tsv", dir / "features.csv", dir / "labels.csv");
    nlohmann::ordered_json side;
    side["num_nodes"] = d.graph.n;
    side["directed"] = d.graph.directed;
    side["self_loops"] = d.graph.self_loops;
    side["spec"] = spec;
    side["split"] = split_to_json(d.split);
    write_file(dir / "split.json", side.dump(1) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(read_file(dir / "split.json"));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError((dir / "split.json").string(), 0, e.what());
    }
    const bool directed = side.value("directed", false);
    const bool self_loops = side.value("self_loops", !directed);
    Dataset d;
    d.graph = load_graph(dir / "edges.tsv", dir / "features.csv", dir / "labels.csv", directed, self_loops);
    d.split = split_from_json(side.at("split"), d.graph.n);
    return d;
}

} // namespace mgnni
