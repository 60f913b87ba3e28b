#include "segdiff/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace segdiff::metrics {

namespace {

void check_binary(const LabelMatrix& m, const char* who) {
    for (uint8_t b : m.v)
        if (b > 1) throw ContractError(std::string(who) + ": labels must be binary");
}

std::vector<uint64_t> labelset_sequence(const SegmentList& segs) {
    std::vector<uint64_t> s;
    s.reserve(segs.size());
    for (const auto& g : segs) s.push_back(g.labels);
    return s;
}

int levenshtein(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= m; ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double iou(const Segment& a, const Segment& b) {
    const int inter = std::max(0, std::min(a.end, b.end) - std::max(a.start, b.start));
    const int uni = std::max(a.end, b.end) - std::min(a.start, b.start);
    return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

}  // namespace

SegmentList to_segments(const LabelMatrix& labels) {
    check_binary(labels, "to_segments");
    SegmentList segs;
    if (labels.L == 0) return segs;
    int start = 0;
    uint64_t cur = labels.labelset(0);
    for (int t = 1; t < labels.L; ++t) {
        uint64_t ls = labels.labelset(t);
        if (ls != cur) {
            segs.push_back({start, t, cur});
            start = t;
            cur = ls;
        }
    }
    segs.push_back({start, labels.L, cur});
    return segs;
}

LabelMatrix rasterize(const SegmentList& segs, int C) {
    int L = segs.empty() ? 0 : segs.back().end;
    LabelMatrix m = LabelMatrix::zeros(L, C);
    for (const auto& s : segs)
        for (int t = s.start; t < s.end; ++t)
            for (int c = 0; c < C; ++c)
                if (s.labels & (1ULL << c)) m.at(t, c) = 1;
    return m;
}

double frame_accuracy(const LabelMatrix& pred, const LabelMatrix& gt) {
    if (pred.L != gt.L || pred.C != gt.C) throw ContractError("frame_accuracy: shape mismatch");
    check_binary(pred, "frame_accuracy");
    check_binary(gt, "frame_accuracy");
    if (gt.L == 0) throw ContractError("frame_accuracy: empty sequence");
    int hits = 0;
    for (int t = 0; t < gt.L; ++t)
        if (pred.labelset(t) == gt.labelset(t)) ++hits;
    return 100.0 * hits / gt.L;
}

double edit_score(const SegmentList& pred, const SegmentList& gt) {
    const auto a = labelset_sequence(pred);
    const auto b = labelset_sequence(gt);
    if (a.empty() && b.empty()) return 100.0;
    const int dist = levenshtein(a, b);
    const double denom = static_cast<double>(std::max(a.size(), b.size()));
    return std::max(0.0, (1.0 - dist / denom) * 100.0);
}

double f1_at(const SegmentList& pred, const SegmentList& gt, double tau) {
    SegmentList p, g;
    for (const auto& s : pred)
        if (s.labels != 0) p.push_back(s);
    for (const auto& s : gt)
        if (s.labels != 0) g.push_back(s);
    std::vector<bool> matched(g.size(), false);
    int tp = 0, fp = 0;
    for (const auto& ps : p) {
        int best = -1;
        double best_iou = -1.0;
        for (size_t j = 0; j < g.size(); ++j) {
            if (matched[j] || g[j].labels != ps.labels) continue;
            double v = iou(ps, g[j]);
            if (v > best_iou) {
                best_iou = v;
                best = static_cast<int>(j);
            }
        }
        if (best >= 0 && best_iou >= tau) {
            ++tp;
            matched[static_cast<size_t>(best)] = true;
        } else {
            ++fp;
        }
    }
    int fn = 0;
    for (bool m : matched)
        if (!m) ++fn;
    if (tp + fp + fn == 0) return 100.0;
    return 100.0 * 2.0 * tp / (2.0 * tp + fp + fn);
}

MetricReport evaluate(const std::vector<LabelMatrix>& predictions,
                      const std::vector<LabelMatrix>& ground_truths) {
    if (predictions.empty() || predictions.size() != ground_truths.size())
        throw ContractError("evaluate: sample lists must be aligned and non-empty");
    MetricReport r;
    int64_t frames = 0, hits = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const auto& p = predictions[i];
        const auto& g = ground_truths[i];
        SampleMetrics s;
        s.acc = frame_accuracy(p, g);
        auto ps = to_segments(p);
        auto gs = to_segments(g);
        s.edit = edit_score(ps, gs);
        s.f1_10 = f1_at(ps, gs, 0.10);
        s.f1_25 = f1_at(ps, gs, 0.25);
        s.f1_50 = f1_at(ps, gs, 0.50);
        frames += g.L;
        hits += static_cast<int64_t>(std::llround(s.acc / 100.0 * g.L));
        r.edit += s.edit;
        r.f1_10 += s.f1_10;
        r.f1_25 += s.f1_25;
        r.f1_50 += s.f1_50;
        r.per_sample.push_back(s);
    }
    const double n = static_cast<double>(predictions.size());
    r.acc = 100.0 * static_cast<double>(hits) / static_cast<double>(frames);
    r.edit /= n;
    r.f1_10 /= n;
    r.f1_25 /= n;
    r.f1_50 /= n;
    return r;
}

}  // namespace segdiff::metrics
