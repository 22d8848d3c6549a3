#pragma once
// Monthly socio-technical networks: the directed social (reply) graph, the undirected
// technical (co-commit) graph, and their summary metrics.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stsf/core/time.hpp"
#include "stsf/identity.hpp"

namespace stsf {

enum class Directedness { directed, undirected };

/// Simple graph over contributor ids: sorted unique node list, sorted unique edge list,
/// no self-loops. Undirected edges are stored with first < second.
struct Graph {
    Directedness directedness = Directedness::undirected;
    std::vector<ContributorId> nodes;
    std::vector<std::pair<ContributorId, ContributorId>> edges;

    bool operator==(const Graph&) const = default;

    std::size_t node_count() const { return nodes.size(); }
    std::size_t edge_count() const { return edges.size(); }
};

/// Collects nodes/edges, normalizes and freezes them into a Graph.
class GraphBuilder {
public:
    explicit GraphBuilder(Directedness d) : directedness_(d) {}

    void add_node(ContributorId v) { nodes_.insert(v); }

    void add_edge(ContributorId a, ContributorId b) {
        if (a == b) return;
        nodes_.insert(a);
        nodes_.insert(b);
        if (directedness_ == Directedness::undirected && b < a) std::swap(a, b);
        edges_.emplace(a, b);
    }

    Graph build() const {
        Graph g;
        g.directedness = directedness_;
        g.nodes.assign(nodes_.begin(), nodes_.end());
        g.edges.assign(edges_.begin(), edges_.end());
        return g;
    }

private:
    Directedness directedness_;
    std::set<ContributorId> nodes_;
    std::set<std::pair<ContributorId, ContributorId>> edges_;
};

/// One kept email after identity resolution.
struct EmailEvent {
    std::string message_id;
    std::optional<std::string> parent_id;  // In-Reply-To, else last References entry
    ContributorId sender = -1;
    Timestamp timestamp{};

    bool operator==(const EmailEvent&) const = default;
};

/// One source-filtered commit after identity resolution.
struct CommitEvent {
    ContributorId author = -1;
    Timestamp timestamp{};
    std::vector<std::string> files;

    bool operator==(const CommitEvent&) const = default;
};

struct SocialBuild {
    Graph graph;
    std::size_t unknown_parents = 0;  // replies whose parent id is not in the project archive
};

/// Directed reply graph for one project-month. `sender_of` covers the whole project so that a
/// reply to an earlier month's message still yields an edge (credited to the reply's month).
/// Edge A -> B means B replied to A. Every sender of the month is a node.
inline SocialBuild build_social(std::span<const EmailEvent> month_messages,
                                const std::unordered_map<std::string, ContributorId>& sender_of) {
    GraphBuilder builder(Directedness::directed);
    SocialBuild out;
    for (const auto& m : month_messages) {
        builder.add_node(m.sender);
        if (!m.parent_id) continue;
        auto it = sender_of.find(*m.parent_id);
        if (it == sender_of.end()) {
            ++out.unknown_parents;
            continue;
        }
        builder.add_edge(it->second, m.sender);
    }
    out.graph = builder.build();
    return out;
}

/// Strips the SVN layout prefix so that the same file on trunk and on a branch compares equal:
/// everything up to and including the first "trunk/", "branches/<name>/" or "tags/<name>/".
inline std::string strip_branch(std::string_view path) {
    std::vector<std::string_view> parts;
    std::size_t pos = 0;
    while (pos <= path.size()) {
        auto slash = path.find('/', pos);
        if (slash == std::string_view::npos) {
            parts.push_back(path.substr(pos));
            break;
        }
        parts.push_back(path.substr(pos, slash - pos));
        pos = slash + 1;
    }
    std::size_t start = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (parts[i] == "trunk") {
            start = i + 1;
            break;
        }
        if ((parts[i] == "branches" || parts[i] == "tags") && i + 2 < parts.size()) {
            start = i + 2;
            break;
        }
    }
    std::string out;
    for (std::size_t i = start; i < parts.size(); ++i) {
        if (i > start) out.push_back('/');
        out += parts[i];
    }
    return out;
}

/// Undirected co-commit graph for one project-month: committers are nodes, and two committers
/// are linked when they touched the same (branch-stripped) file.
inline Graph build_technical(std::span<const CommitEvent> month_commits) {
    GraphBuilder builder(Directedness::undirected);
    std::map<std::string, std::set<ContributorId>> touched;
    for (const auto& c : month_commits) {
        builder.add_node(c.author);
        for (const auto& f : c.files) touched[strip_branch(f)].insert(c.author);
    }
    for (const auto& [file, authors] : touched)
        for (auto a = authors.begin(); a != authors.end(); ++a)
            for (auto b = std::next(a); b != authors.end(); ++b) builder.add_edge(*a, *b);
    return builder.build();
}

enum class ClusteringMode {
    transitivity,  // 3 * triangles / connected triples
    mean_local,    // average of per-node local clustering (degree < 2 counts as 0)
};

struct GraphMetrics {
    std::size_t nodes = 0;
    std::size_t edges = 0;
    double clustering_coef = 0.0;
    double mean_degree = 0.0;
    long long long_tail = 0;

    bool operator==(const GraphMetrics&) const = default;
};

/// Degree sequence aligned with g.nodes; for directed graphs degree = in + out.
inline std::vector<long long> degree_sequence(const Graph& g) {
    std::unordered_map<ContributorId, std::size_t> index;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) index[g.nodes[i]] = i;
    std::vector<long long> deg(g.nodes.size(), 0);
    for (const auto& [a, b] : g.edges) {
        ++deg[index.at(a)];
        ++deg[index.at(b)];
    }
    return deg;
}

/// Nearest-rank 75th percentile of the ascending degree sequence (1-based rank ceil(0.75 n)).
inline long long long_tail_degree(std::vector<long long> degrees) {
    if (degrees.empty()) return 0;
    std::sort(degrees.begin(), degrees.end());
    auto n = degrees.size();
    std::size_t rank = (3 * n + 3) / 4;  // ceil(0.75 n)
    return degrees[rank - 1];
}

/// Neighbour lists of the undirected skeleton, indexed like g.nodes.
inline std::vector<std::vector<std::size_t>> undirected_adjacency(const Graph& g) {
    std::unordered_map<ContributorId, std::size_t> index;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) index[g.nodes[i]] = i;
    std::vector<std::set<std::size_t>> adj(g.nodes.size());
    for (const auto& [a, b] : g.edges) {
        auto ia = index.at(a), ib = index.at(b);
        adj[ia].insert(ib);
        adj[ib].insert(ia);
    }
    std::vector<std::vector<std::size_t>> out(adj.size());
    for (std::size_t i = 0; i < adj.size(); ++i) out[i].assign(adj[i].begin(), adj[i].end());
    return out;
}

inline GraphMetrics metrics(const Graph& g, ClusteringMode mode = ClusteringMode::transitivity) {
    GraphMetrics m;
    m.nodes = g.node_count();
    m.edges = g.edge_count();
    if (m.nodes == 0) return m;

    auto deg = degree_sequence(g);
    long long total = 0;
    for (auto d : deg) total += d;
    m.mean_degree = static_cast<double>(total) / static_cast<double>(m.nodes);
    m.long_tail = long_tail_degree(deg);

    auto adj = undirected_adjacency(g);
    // Triangles at each node: pairs of neighbours that are themselves adjacent.
    std::vector<long long> tri(adj.size(), 0);
    for (std::size_t v = 0; v < adj.size(); ++v) {
        const auto& nv = adj[v];
        for (std::size_t i = 0; i < nv.size(); ++i)
            for (std::size_t j = i + 1; j < nv.size(); ++j)
                if (std::binary_search(adj[nv[i]].begin(), adj[nv[i]].end(), nv[j])) ++tri[v];
    }

    if (mode == ClusteringMode::transitivity) {
        long long closed = 0, triples = 0;
        for (std::size_t v = 0; v < adj.size(); ++v) {
            long long k = static_cast<long long>(adj[v].size());
            triples += k * (k - 1) / 2;
            closed += tri[v];  // each triangle is counted once per corner, i.e. 3x overall
        }
        m.clustering_coef = triples == 0 ? 0.0 : static_cast<double>(closed) / static_cast<double>(triples);
    } else {
        double sum = 0.0;
        for (std::size_t v = 0; v < adj.size(); ++v) {
            long long k = static_cast<long long>(adj[v].size());
            if (k >= 2) sum += static_cast<double>(tri[v]) / static_cast<double>(k * (k - 1) / 2);
        }
        m.clustering_coef = sum / static_cast<double>(adj.size());
    }
    return m;
}

/// `src dst` per line.
inline void write_edge_list(std::ostream& out, const Graph& g) {
    for (const auto& [a, b] : g.edges) out << a << ' ' << b << '\n';
}

}  // namespace stsf
