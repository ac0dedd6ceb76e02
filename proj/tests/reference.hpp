// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <set>
#include <vector>

namespace livekv::testing {

// Step-by-step bucketed selection written without sorting: every step scans for the
// best remaining token (highest score, lowest index on ties). Kept deliberately naive
// so it can serve as an independent reference for vsb_select.
struct NaiveVsbTrace {
    std::set<std::size_t> kept;
    std::set<std::size_t> phase1;
    std::vector<std::size_t> phase1_per_bucket;
    std::vector<std::size_t> phase2_per_bucket;
};

inline NaiveVsbTrace naive_vsb(const std::vector<float>& s, std::size_t M, std::size_t N, std::size_t B, double R) {
    const std::size_t L = s.size();
    NaiveVsbTrace t;
    t.phase1_per_bucket.assign(N, 0);
    t.phase2_per_bucket.assign(N, 0);
    if (L <= M) {
        for (std::size_t i = 0; i < L; ++i) {
            t.kept.insert(i);
        }
        return t;
    }
    std::size_t top = static_cast<std::size_t>(std::floor(R * static_cast<double>(M) + 0.5));
    if (top > M) {
        top = M;
    }
    std::vector<bool> visited(L, false);
    auto next_best = [&]() {
        std::size_t best = L;
        for (std::size_t i = 0; i < L; ++i) {
            if (!visited[i] && (best == L || s[i] > s[best])) {
                best = i;
            }
        }
        return best;
    };
    // Bucket of index i: the j with j*L <= i*N < (j+1)*L.
    auto bucket = [&](std::size_t i) {
        std::size_t j = 0;
        while ((j + 1) * L <= i * N) {
            ++j;
        }
        return j;
    };
    for (std::size_t step = 0; step < top; ++step) {
        const std::size_t i = next_best();
        visited[i] = true;
        t.kept.insert(i);
        t.phase1.insert(i);
        ++t.phase1_per_bucket[bucket(i)];
    }
    while (t.kept.size() < M) {
        const std::size_t i = next_best();
        if (i == L) {
            break;
        }
        visited[i] = true;
        const std::size_t b = bucket(i);
        if (t.phase1_per_bucket[b] + t.phase2_per_bucket[b] < B) {
            ++t.phase2_per_bucket[b];
            t.kept.insert(i);
        }
    }
    return t;
}

} // namespace livekv::testing
