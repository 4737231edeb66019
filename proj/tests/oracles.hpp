#pragma once
// Independent reference implementations shared by the unit tests and the
// acceptance run.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "invjoint/mining.hpp"
#include "invjoint/rng.hpp"

namespace invjoint::oracle {

inline ProbMatrix random_probs(std::size_t n, std::size_t c, Rng& rng, double sharp) {
    ProbMatrix p{n, c, std::vector<double>(n * c)};
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) z += p.values[i * c + j] = std::exp(sharp * rng.normal());
        for (std::size_t j = 0; j < c; ++j) p.values[i * c + j] /= z;
    }
    return p;
}

inline double oracle_quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::size_t oracle_overlap(std::span<const double> a, std::span<const double> b, std::size_t k) {
    auto top = [k](std::span<const double> s) {
        std::vector<std::size_t> idx(s.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return s[x] > s[y]; });
        idx.resize(k);
        return idx;
    };
    const auto ta = top(a), tb = top(b);
    std::size_t n = 0;
    for (auto x : ta) n += std::count(tb.begin(), tb.end(), x);
    return n;
}

// Both predicates applied by exhaustive evaluation with independently derived thresholds.
inline std::vector<std::size_t> brute_force(const std::vector<std::size_t>& cand, const ProbMatrix& p2, const ProbMatrix& p3,
                                     const std::vector<std::size_t>& labels, double rho, std::size_t k,
                                     double* r1_out, std::size_t* r2_out) {
    std::vector<double> s1;
    std::vector<std::size_t> ov;
    for (auto i : cand) {
        double best = -1;
        for (std::size_t c = 0; c < p2.cols; ++c)
            if (c != labels[i]) best = std::max(best, p2.row(i)[c] + p3.row(i)[c]);
        s1.push_back(best);
        ov.push_back(oracle_overlap(p2.row(i), p3.row(i), k));
    }
    const double r1 = oracle_quantile(s1, 1 - rho);
    std::size_t r2 = 0;
    double best_gap = 1e9;
    for (std::size_t t = 0; t <= k; ++t) {
        const double frac = static_cast<double>(std::count_if(ov.begin(), ov.end(), [t](auto o) { return o < t; })) /
                            static_cast<double>(cand.size());
        if (std::abs(frac - rho) < best_gap) {
            best_gap = std::abs(frac - rho);
            r2 = t;
        }
    }
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < cand.size(); ++j)
        if (s1[j] > r1 && ov[j] < r2) out.push_back(cand[j]);
    std::sort(out.begin(), out.end());
    *r1_out = r1;
    *r2_out = r2;
    return out;
}

}  // namespace invjoint::oracle
