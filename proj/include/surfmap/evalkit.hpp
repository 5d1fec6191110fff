#pragma once

// Model-side evaluation math: normalization, dihedral augmentation, focal
// loss and multilabel metrics.

#include "surfmap/util.hpp"
#include "surfmap/vector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace surfmap {

using ClassVector = std::array<double, kNumClasses>;
using TargetVector = std::array<bool, kNumClasses>;

/// C x H x W channel stack, channel-major.
struct Sample {
    int channels = 0, height = 0, width = 0;
    std::vector<double> data;
    TargetVector target{};

    double& at(int c, int r, int col) { return data[(static_cast<std::size_t>(c) * height + r) * width + col]; }
    double at(int c, int r, int col) const { return data[(static_cast<std::size_t>(c) * height + r) * width + col]; }
};

struct ModalityStats {
    double mean = 0.0, stddev = 1.0;
};

/// (v - mean) / stddev using the stats of each channel's modality.
inline Sample normalize(const Sample& s, const std::vector<int>& modality_of_channel, const std::vector<ModalityStats>& stats) {
    if (modality_of_channel.size() != static_cast<std::size_t>(s.channels)) throw std::invalid_argument("normalize: modality map size mismatch");
    for (const auto& m : stats)
        if (!(m.stddev > 0.0)) throw std::invalid_argument("normalize: modality stddev must be positive");
    Sample out = s;
    const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
    for (int c = 0; c < s.channels; ++c) {
        const int m = modality_of_channel[static_cast<std::size_t>(c)];
        if (m < 0 || static_cast<std::size_t>(m) >= stats.size()) throw std::invalid_argument("normalize: bad modality index");
        const auto& st = stats[static_cast<std::size_t>(m)];
        for (std::size_t i = 0; i < plane; ++i) {
            double& v = out.data[static_cast<std::size_t>(c) * plane + i];
            v = (v - st.mean) / st.stddev;
        }
    }
    return out;
}

enum class AugmentOp { Identity, HFlip, VFlip, Rot90, Rot180, Rot270 };

/// Spatial transform on every channel; rotations are counter-clockwise. Target is untouched.
inline Sample augment(const Sample& s, AugmentOp op) {
    const bool rotation = op == AugmentOp::Rot90 || op == AugmentOp::Rot270;
    if ((rotation || op == AugmentOp::Rot180) && s.height != s.width) throw std::invalid_argument("augment: rotation needs square channels");
    Sample out = s;
    if (rotation) std::swap(out.height, out.width);
    const int H = s.height, W = s.width;
    for (int c = 0; c < s.channels; ++c)
        for (int r = 0; r < H; ++r)
            for (int col = 0; col < W; ++col) {
                int rr = r, cc = col;
                switch (op) {
                    case AugmentOp::Identity: break;
                    case AugmentOp::HFlip: cc = W - 1 - col; break;
                    case AugmentOp::VFlip: rr = H - 1 - r; break;
                    case AugmentOp::Rot90: rr = W - 1 - col; cc = r; break;
                    case AugmentOp::Rot180: rr = H - 1 - r; cc = W - 1 - col; break;
                    case AugmentOp::Rot270: rr = col; cc = H - 1 - r; break;
                }
                out.at(c, rr, cc) = s.at(c, r, col);
            }
    return out;
}

/// Mean over classes of -alpha_t (1 - p_t)^gamma ln(p_t), probabilities clamped to [1e-7, 1 - 1e-7].
inline double focal_loss(std::span<const double> probs, std::span<const bool> target, double alpha = 0.25, double gamma = 2.0) {
    if (probs.size() != target.size() || probs.empty()) throw std::invalid_argument("focal_loss: size mismatch");
    double sum = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (!std::isfinite(probs[k])) throw std::invalid_argument("focal_loss: non-finite probability");
        const double p = std::clamp(probs[k], 1e-7, 1.0 - 1e-7);
        const double pt = target[k] ? p : 1.0 - p;
        const double at = target[k] ? alpha : 1.0 - alpha;
        sum += -at * std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    return sum / static_cast<double>(probs.size());
}

struct ScoreRow {
    std::string patch_id;
    ClassVector scores{};
    TargetVector targets{};
};

using ScoreTable = std::vector<ScoreRow>;

struct BinaryCounts {
    long long tp = 0, fp = 0, tn = 0, fn = 0;
};

struct ClassMetrics {
    double accuracy = 0, precision = 0, recall = 0, f1 = 0;
    double ap = std::numeric_limits<double>::quiet_NaN();
    double auroc = std::numeric_limits<double>::quiet_NaN();
    long long support = 0;
};

/// Step-wise AP over descending score groups; NaN without positives.
inline double average_precision(std::span<const double> scores, std::span<const bool> targets) {
    if (scores.size() != targets.size()) throw std::invalid_argument("average_precision: size mismatch");
    long long npos = 0;
    for (bool t : targets) npos += t;
    if (npos == 0) return std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    long long tp = 0, fp = 0;
    double ap = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) (targets[idx[j++]] ? tp : fp)++;
        const double recall = static_cast<double>(tp) / static_cast<double>(npos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev) * precision;
        prev = recall;
        i = j;
    }
    return ap;
}

/// Mann-Whitney AUROC with ties counted one half; NaN when one class is absent.
inline double auroc(std::span<const double> scores, std::span<const bool> targets) {
    if (scores.size() != targets.size()) throw std::invalid_argument("auroc: size mismatch");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    long long npos = 0, nneg = 0, twice_u = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        long long gp = 0, gn = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) (targets[idx[j++]] ? gp : gn)++;
        twice_u += gp * (2 * nneg + gn);
        npos += gp;
        nneg += gn;
        i = j;
    }
    if (npos == 0 || nneg == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(twice_u) / static_cast<double>(2 * npos * nneg);
}

struct MetricReport {
    std::vector<std::string> classes;
    std::vector<ClassMetrics> per_class;
    double macro_accuracy = 0, macro_precision = 0, macro_recall = 0, macro_f1 = 0;
    double mean_ap = 0, macro_auroc = 0;
    double hamming_loss = 0, subset_accuracy = 0;
    std::size_t samples = 0;
};

/// Arithmetic mean of the finite entries; NaN if none.
inline double macro_mean(std::span<const double> values) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : values)
        if (!std::isnan(v)) {
            sum += v;
            ++n;
        }
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

inline bool predicted(double score, double threshold) { return score >= threshold; }

/// Per-class confusion metrics at the threshold plus AP and AUROC.
inline std::vector<ClassMetrics> per_class_metrics(const ScoreTable& table, double threshold = 0.5) {
    if (table.empty()) throw std::invalid_argument("per_class_metrics: empty table");
    std::vector<ClassMetrics> out(kNumClasses);
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        BinaryCounts c;
        std::vector<double> s;
        std::unique_ptr<bool[]> t(new bool[table.size()]);
        std::size_t n = 0;
        for (const auto& row : table) {
            const bool p = predicted(row.scores[k], threshold), y = row.targets[k];
            if (p && y) ++c.tp;
            else if (p) ++c.fp;
            else if (y) ++c.fn;
            else ++c.tn;
            s.push_back(row.scores[k]);
            t[n++] = y;
        }
        auto ratio = [](long long a, long long b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
        ClassMetrics& m = out[k];
        m.accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn);
        m.precision = ratio(c.tp, c.tp + c.fp);
        m.recall = ratio(c.tp, c.tp + c.fn);
        m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
        m.support = c.tp + c.fn;
        const std::span<const bool> ts(t.get(), n);
        m.ap = average_precision(s, ts);
        m.auroc = auroc(s, ts);
    }
    return out;
}

/// Full report: per-class metrics, macro averages, mAP, Hamming loss and subset accuracy.
inline MetricReport evaluate(const ScoreTable& table, double threshold = 0.5) {
    MetricReport r;
    r.classes.assign(kClassNames.begin(), kClassNames.end());
    r.per_class = per_class_metrics(table, threshold);
    r.samples = table.size();
    auto column = [&](double ClassMetrics::*f) {
        std::vector<double> v;
        for (const auto& m : r.per_class) v.push_back(m.*f);
        return macro_mean(v);
    };
    r.macro_accuracy = column(&ClassMetrics::accuracy);
    r.macro_precision = column(&ClassMetrics::precision);
    r.macro_recall = column(&ClassMetrics::recall);
    r.macro_f1 = column(&ClassMetrics::f1);
    r.mean_ap = column(&ClassMetrics::ap);
    r.macro_auroc = column(&ClassMetrics::auroc);
    long long wrong = 0, exact = 0;
    for (const auto& row : table) {
        bool all = true;
        for (std::size_t k = 0; k < kNumClasses; ++k)
            if (predicted(row.scores[k], threshold) != row.targets[k]) {
                ++wrong;
                all = false;
            }
        exact += all;
    }
    r.hamming_loss = static_cast<double>(wrong) / static_cast<double>(table.size() * kNumClasses);
    r.subset_accuracy = static_cast<double>(exact) / static_cast<double>(table.size());
    return r;
}

/// In-domain minus cross-domain AUROC per class.
inline std::vector<double> delta_auc(const MetricReport& in_domain, const MetricReport& cross_domain) {
    if (in_domain.classes != cross_domain.classes || in_domain.per_class.size() != cross_domain.per_class.size())
        throw std::invalid_argument("delta_auc: class sets differ");
    std::vector<double> out;
    for (std::size_t k = 0; k < in_domain.per_class.size(); ++k) out.push_back(in_domain.per_class[k].auroc - cross_domain.per_class[k].auroc);
    return out;
}

// ---- CSV interfaces ----

/// Reads patch_id, score_<class> x7, target_<class> x7 (columns located by header name).
inline ScoreTable read_score_table(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ": empty score table");
    const auto header = split(trim(line), ',');
    auto find = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw IoError(path + ": missing column " + name);
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t id_col = find("patch_id");
    std::array<std::size_t, kNumClasses> sc{}, tc{};
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        sc[k] = find(std::string("score_") + kClassNames[k]);
        tc[k] = find(std::string("target_") + kClassNames[k]);
    }
    ScoreTable t;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != header.size()) throw IoError(path + ": row has " + std::to_string(f.size()) + " fields");
        ScoreRow row;
        row.patch_id = f[id_col];
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            row.scores[k] = parse_double(f[sc[k]]);
            if (!(row.scores[k] >= 0.0 && row.scores[k] <= 1.0)) throw IoError(path + ": score outside [0, 1] for " + row.patch_id);
            const std::string& tv = f[tc[k]];
            if (tv != "0" && tv != "1") throw IoError(path + ": target must be 0 or 1 for " + row.patch_id);
            row.targets[k] = tv == "1";
        }
        t.push_back(std::move(row));
    }
    return t;
}

inline std::string score_table_csv(const ScoreTable& t) {
    std::string s = "patch_id";
    for (const char* c : kClassNames) s += std::string(",score_") + c;
    for (const char* c : kClassNames) s += std::string(",target_") + c;
    s += "\n";
    for (const auto& row : t) {
        s += row.patch_id;
        for (double v : row.scores) s += "," + fmt_double(v);
        for (bool v : row.targets) s += v ? ",1" : ",0";
        s += "\n";
    }
    return s;
}

inline std::string metric_value(double v, int decimals = 6) { return std::isnan(v) ? "nan" : fmt_fixed(v, decimals); }

/// Per-class rows plus a macro row, tagged by model and domain.
inline std::string metrics_csv_rows(const std::string& model, const std::string& domain, const MetricReport& r) {
    std::string s;
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        const auto& m = r.per_class[k];
        s += model + "," + domain + "," + r.classes[k] + "," + metric_value(m.accuracy) + "," + metric_value(m.precision) + "," +
             metric_value(m.recall) + "," + metric_value(m.f1) + "," + metric_value(m.ap) + "," + metric_value(m.auroc) + "," +
             std::to_string(m.support) + "\n";
    }
    long long support = 0;
    for (const auto& m : r.per_class) support += m.support;
    s += model + "," + domain + ",avg," + metric_value(r.macro_accuracy) + "," + metric_value(r.macro_precision) + "," +
         metric_value(r.macro_recall) + "," + metric_value(r.macro_f1) + "," + metric_value(r.mean_ap) + "," + metric_value(r.macro_auroc) +
         "," + std::to_string(support) + "\n";
    return s;
}

inline std::string metrics_csv_header() { return "model,domain,class,accuracy,precision,recall,f1,ap,auroc,support\n"; }

inline std::string summary_csv_header() { return "model,domain,samples,macro_f1,map,macro_auroc,hamming_loss,subset_accuracy\n"; }

inline std::string summary_csv_row(const std::string& model, const std::string& domain, const MetricReport& r) {
    return model + "," + domain + "," + std::to_string(r.samples) + "," + metric_value(r.macro_f1) + "," + metric_value(r.mean_ap) + "," +
           metric_value(r.macro_auroc) + "," + metric_value(r.hamming_loss) + "," + metric_value(r.subset_accuracy) + "\n";
}

/// One row per model, one column per class, three decimals.
inline std::string delta_auc_csv_header() {
    std::string s = "Model";
    for (const char* c : kClassNames) s += std::string(",") + c;
    return s + "\n";
}

inline std::string delta_auc_csv_row(const std::string& model, const std::vector<double>& delta) {
    std::string s = model;
    for (double v : delta) s += "," + metric_value(v, 3);
    return s + "\n";
}

}  // namespace surfmap
