#pragma once

#include <cstdint>
#include <vector>

#include "segdiff/error.hpp"

namespace segdiff::metrics {

// Binary multi-label frame matrix, row-major L x C. C <= 64 so a frame's
// labelset fits in one word.
struct LabelMatrix {
    int L = 0;
    int C = 0;
    std::vector<uint8_t> v;  // entries in {0,1}

    static LabelMatrix zeros(int L, int C) { return {L, C, std::vector<uint8_t>(size_t(L) * C, 0)}; }
    uint8_t at(int t, int c) const { return v[static_cast<size_t>(t) * C + c]; }
    uint8_t& at(int t, int c) { return v[static_cast<size_t>(t) * C + c]; }
    uint64_t labelset(int t) const {
        uint64_t m = 0;
        for (int c = 0; c < C; ++c)
            if (at(t, c)) m |= (1ULL << c);
        return m;
    }
};

// Maximal run of frames sharing one labelset; [start, end), labels is the
// class bitmask (0 = background / target absent).
struct Segment {
    int start = 0;
    int end = 0;
    uint64_t labels = 0;
};

using SegmentList = std::vector<Segment>;

// Maximal-run decomposition. Segments tile [0, L); adjacent segments differ.
SegmentList to_segments(const LabelMatrix& labels);

// Inverse of to_segments (testing aid).
LabelMatrix rasterize(const SegmentList& segs, int C);

// Percentage of frames whose full predicted labelset equals the GT labelset.
double frame_accuracy(const LabelMatrix& pred, const LabelMatrix& gt);

// (1 - Levenshtein(labelset sequences) / max(len)) * 100, clamped at 0.
double edit_score(const SegmentList& pred, const SegmentList& gt);

// Segmental F1 at IoU threshold tau; greedy order-of-appearance one-to-one
// matching over equal-labelset segments, background excluded.
double f1_at(const SegmentList& pred, const SegmentList& gt, double tau);

struct SampleMetrics {
    double acc = 0, edit = 0, f1_10 = 0, f1_25 = 0, f1_50 = 0;
};

struct MetricReport {
    double acc = 0, edit = 0, f1_10 = 0, f1_25 = 0, f1_50 = 0;
    std::vector<SampleMetrics> per_sample;
};

// ACC pooled over frames across samples; EDIT and F1 averaged per sample.
MetricReport evaluate(const std::vector<LabelMatrix>& predictions,
                      const std::vector<LabelMatrix>& ground_truths);

}  // namespace segdiff::metrics
