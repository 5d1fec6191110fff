#pragma once

// Spatially independent dataset splits, minority oversampling and label
// statistics.

#include "surfmap/patchgen.hpp"
#include "surfmap/util.hpp"
#include "surfmap/vector.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace surfmap {

/// Adjacency by index into the patch list; edge iff rectangles share positive area.
struct OverlapGraph {
    std::vector<std::string> ids;
    std::vector<std::vector<int>> adj;

    std::size_t size() const { return ids.size(); }
    std::size_t degree(std::size_t i) const { return adj[i].size(); }
    std::size_t edge_count() const {
        std::size_t n = 0;
        for (const auto& a : adj) n += a.size();
        return n / 2;
    }
};

inline OverlapGraph build_overlap_graph(const std::vector<PatchSpec>& patches) {
    OverlapGraph g;
    std::set<std::string> seen;
    for (const auto& p : patches) {
        if (!seen.insert(p.patch_id).second) throw std::invalid_argument("build_overlap_graph: duplicate patch_id " + p.patch_id);
        g.ids.push_back(p.patch_id);
    }
    g.adj.assign(patches.size(), {});
    std::vector<int> order(patches.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return patches[static_cast<std::size_t>(a)].geo_rect.min_x < patches[static_cast<std::size_t>(b)].geo_rect.min_x; });
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Rect& a = patches[static_cast<std::size_t>(order[i])].geo_rect;
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            const Rect& b = patches[static_cast<std::size_t>(order[j])].geo_rect;
            if (b.min_x >= a.max_x) break;
            if (a.overlaps(b)) {
                g.adj[static_cast<std::size_t>(order[i])].push_back(order[j]);
                g.adj[static_cast<std::size_t>(order[j])].push_back(order[i]);
            }
        }
    }
    for (auto& a : g.adj) std::sort(a.begin(), a.end());
    return g;
}

enum class Split { Train, Val, TestIn, TestCross, Unused };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::TestIn: return "test_in";
        case Split::TestCross: return "test_cross";
        case Split::Unused: return "unused";
    }
    return "unused";
}

constexpr std::array<Split, 5> kAllSplits{Split::Train, Split::Val, Split::TestIn, Split::TestCross, Split::Unused};

struct SplitManifest {
    std::uint64_t seed = 0;
    std::string generator = "mt19937_64";
    std::vector<std::string> ids;       ///< in-domain patches, input order
    std::vector<Split> assignment;      ///< parallel to ids
    std::vector<std::string> cross_ids; ///< second-region patches drawn as test_cross

    std::vector<std::string> members(Split s) const {
        if (s == Split::TestCross) return cross_ids;
        std::vector<std::string> out;
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (assignment[i] == s) out.push_back(ids[i]);
        return out;
    }
    std::size_t count(Split s) const { return members(s).size(); }
};

/// Uniform integer in [0, n) by rejection on raw 64-bit draws, so streams
/// do not depend on the standard library's distribution implementation.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do v = rng();
    while (v >= limit);
    return v % n;
}

/// Fisher-Yates permutation of 0..n-1.
inline std::vector<int> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_below(rng, i)]);
    return p;
}

/// Number of graph edges joining two different splits among train, val and test_in.
inline std::size_t cross_split_edges(const OverlapGraph& g, const std::vector<Split>& assignment) {
    auto counted = [](Split s) { return s == Split::Train || s == Split::Val || s == Split::TestIn; };
    std::size_t n = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
        for (int j : g.adj[i])
            if (static_cast<std::size_t>(j) > i && counted(assignment[i]) && counted(assignment[static_cast<std::size_t>(j)]) &&
                assignment[i] != assignment[static_cast<std::size_t>(j)])
                ++n;
    return n;
}

/// Test first, then validation patches not touching test, then every
/// remaining patch touching neither as train; the rest stay unused.
inline SplitManifest sample_splits(const OverlapGraph& g, std::size_t n_test, std::size_t n_val, std::uint64_t seed) {
    const std::size_t n = g.size();
    if (n_test > n) throw std::invalid_argument("sample_splits: n_test " + std::to_string(n_test) + " exceeds " + std::to_string(n) + " patches");
    SplitManifest m;
    m.seed = seed;
    m.ids = g.ids;
    m.assignment.assign(n, Split::Unused);
    const auto order = seeded_permutation(n, seed);

    std::vector<std::uint8_t> near_test(n, 0), near_val(n, 0);
    for (std::size_t k = 0; k < n_test; ++k) {
        const auto i = static_cast<std::size_t>(order[k]);
        m.assignment[i] = Split::TestIn;
        for (int j : g.adj[i]) near_test[static_cast<std::size_t>(j)] = 1;
    }
    std::size_t taken = 0, available = 0;
    for (std::size_t k = n_test; k < n; ++k) {
        const auto i = static_cast<std::size_t>(order[k]);
        if (near_test[i]) continue;
        ++available;
        if (taken < n_val) {
            m.assignment[i] = Split::Val;
            for (int j : g.adj[i]) near_val[static_cast<std::size_t>(j)] = 1;
            ++taken;
        }
    }
    if (taken < n_val)
        throw std::invalid_argument("sample_splits: n_val " + std::to_string(n_val) + " infeasible; at most " + std::to_string(available) +
                                    " patches are independent of the test set for this seed");
    for (std::size_t i = 0; i < n; ++i)
        if (m.assignment[i] == Split::Unused && !near_test[i] && !near_val[i]) m.assignment[i] = Split::Train;
    return m;
}

/// Draws test_cross from a second region's patches (all of them when n_cross is 0).
inline void assign_cross_domain(SplitManifest& m, const std::vector<std::string>& region_ids, std::size_t n_cross) {
    if (n_cross > region_ids.size()) throw std::invalid_argument("assign_cross_domain: n_cross exceeds region size");
    const std::size_t take = n_cross == 0 ? region_ids.size() : n_cross;
    const auto order = seeded_permutation(region_ids.size(), m.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<int> picked(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(picked.begin(), picked.end());
    m.cross_ids.clear();
    for (int i : picked) m.cross_ids.push_back(region_ids[static_cast<std::size_t>(i)]);
}

inline std::string splits_json(const SplitManifest& m, const OverlapGraph& g) {
    nlohmann::ordered_json doc;
    doc["seed"] = m.seed;
    doc["generator"] = m.generator;
    doc["counts"] = nlohmann::ordered_json::object();
    for (Split s : kAllSplits) doc["counts"][split_name(s)] = m.count(s);
    doc["cross_split_edges"] = cross_split_edges(g, m.assignment);
    doc["splits"] = nlohmann::ordered_json::object();
    for (Split s : kAllSplits) doc["splits"][split_name(s)] = m.members(s);
    return doc.dump(1) + "\n";
}

inline void write_splits(const std::string& path, const SplitManifest& m, const OverlapGraph& g) { write_text_file(path, splits_json(m, g)); }

/// Split id lists as stored in splits.json.
inline std::map<std::string, std::vector<std::string>> read_splits(const std::string& path) {
    std::map<std::string, std::vector<std::string>> out;
    try {
        const auto doc = nlohmann::json::parse(read_text_file(path));
        for (const auto& [name, list] : doc.at("splits").items()) out[name] = list.get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return out;
}

/// Train ids once each, then factor - 1 extra copies of every id carrying a target class.
inline std::vector<std::string> oversample(const std::vector<std::string>& train_ids, const std::vector<LabelRecord>& labels,
                                           const std::vector<std::string>& target_classes = {"Qaf", "Qat"}, int factor = 2) {
    if (factor < 1) throw std::invalid_argument("oversample: factor must be >= 1");
    std::vector<int> targets;
    for (const auto& name : target_classes) {
        const auto cls = class_from_name(name);
        if (!cls) throw std::invalid_argument("oversample: unknown class '" + name + "'");
        targets.push_back(class_index(*cls));
    }
    std::map<std::string, const LabelRecord*> by_id;
    for (const auto& l : labels) by_id[l.patch_id] = &l;
    std::vector<std::string> out(train_ids);
    for (const auto& id : train_ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw std::invalid_argument("oversample: no label for " + id);
        const bool hit = std::any_of(targets.begin(), targets.end(), [&](int k) { return it->second->onehot[static_cast<std::size_t>(k)]; });
        if (hit)
            for (int c = 1; c < factor; ++c) out.push_back(id);
    }
    return out;
}

constexpr int kProportionBins = 20;

struct DatasetStats {
    std::size_t patches = 0;
    std::array<std::size_t, kNumClasses> counts{};
    /// Per class, proportions of the patches where the class is present, in bins of width 0.05.
    std::array<std::array<std::size_t, kProportionBins>, kNumClasses> proportion_hist{};
    std::array<std::size_t, kNumClasses + 1> classes_per_patch{};
};

inline int proportion_bin(double p) {
    return std::clamp(static_cast<int>(std::floor(p * kProportionBins + 1e-12)), 0, kProportionBins - 1);
}

inline DatasetStats dataset_stats(const std::vector<LabelRecord>& labels) {
    DatasetStats s;
    s.patches = labels.size();
    for (const auto& l : labels) {
        int present = 0;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            if (!l.onehot[k]) continue;
            ++present;
            ++s.counts[k];
            ++s.proportion_hist[k][static_cast<std::size_t>(proportion_bin(l.proportions[k]))];
        }
        ++s.classes_per_patch[static_cast<std::size_t>(present)];
    }
    return s;
}

/// Label subset for the given ids; ids may repeat (oversampled lists).
inline std::vector<LabelRecord> select_labels(const std::vector<LabelRecord>& labels, const std::vector<std::string>& ids) {
    std::map<std::string, const LabelRecord*> by_id;
    for (const auto& l : labels) by_id[l.patch_id] = &l;
    std::vector<LabelRecord> out;
    for (const auto& id : ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw std::invalid_argument("select_labels: no label for " + id);
        out.push_back(*it->second);
    }
    return out;
}

inline std::string stats_csv_header() { return "split,table,class,bin,value\n"; }

/// Long-format rows: patches, class_count, proportion_hist (bin = lower edge), classes_per_patch (bin = class count).
inline std::string stats_csv_rows(const std::string& split, const DatasetStats& s) {
    std::string out = split + ",patches,,," + std::to_string(s.patches) + "\n";
    for (std::size_t k = 0; k < kNumClasses; ++k) out += split + ",class_count," + kClassNames[k] + ",," + std::to_string(s.counts[k]) + "\n";
    for (std::size_t k = 0; k < kNumClasses; ++k)
        for (int b = 0; b < kProportionBins; ++b)
            out += split + ",proportion_hist," + kClassNames[k] + "," + fmt_fixed(b / static_cast<double>(kProportionBins), 2) + "," +
                   std::to_string(s.proportion_hist[k][static_cast<std::size_t>(b)]) + "\n";
    for (std::size_t n = 0; n < s.classes_per_patch.size(); ++n)
        out += split + ",classes_per_patch,," + std::to_string(n) + "," + std::to_string(s.classes_per_patch[n]) + "\n";
    return out;
}

}  // namespace surfmap
