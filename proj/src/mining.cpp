#include "invjoint/mining.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "invjoint/errors.hpp"

namespace invjoint {

namespace {

double log_normal_pdf(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

double log_add(double a, double b) {
    const double m = std::max(a, b);
    if (m == -std::numeric_limits<double>::infinity()) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

double gmm_log_likelihood(const MixtureFit& fit, std::span<const double> values) {
    double ll = 0.0;
    for (double x : values)
        ll += log_add(std::log(fit.weights[0]) + log_normal_pdf(x, fit.means[0], fit.variances[0]),
                      std::log(fit.weights[1]) + log_normal_pdf(x, fit.means[1], fit.variances[1]));
    return ll;
}

MixtureFit fit_gmm2(std::span<const double> losses, const GmmOptions& opts) {
    const std::size_t n = losses.size();
    if (n < 4) throw DegeneracyError("mixture fit needs at least 4 samples");
    for (double x : losses)
        if (!std::isfinite(x)) throw NumericError("non-finite loss passed to mixture fit");
    const auto [lo, hi] = std::minmax_element(losses.begin(), losses.end());
    if (*lo == *hi) throw DegeneracyError("all losses identical; no hard samples can be separated");

    std::vector<double> sorted(losses.begin(), losses.end());
    std::sort(sorted.begin(), sorted.end());
    const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    // Split at the median; if nothing lies above it, put the median ties on top.
    const bool ties_up = sorted.back() <= median;
    auto in_lower = [median, ties_up](double x) { return ties_up ? x < median : x <= median; };

    MixtureFit fit;
    {
        double sum[2] = {0, 0}, sq[2] = {0, 0}, cnt[2] = {0, 0};
        for (double x : losses) {
            const int c = in_lower(x) ? 0 : 1;
            sum[c] += x;
            sq[c] += x * x;
            cnt[c] += 1;
        }
        for (int c = 0; c < 2; ++c) {
            fit.means[c] = sum[c] / cnt[c];
            fit.variances[c] = std::max(sq[c] / cnt[c] - fit.means[c] * fit.means[c], opts.variance_floor);
            fit.weights[c] = cnt[c] / static_cast<double>(n);
        }
    }

    std::vector<double> resp(n);
    double ll = gmm_log_likelihood(fit, losses);
    fit.log_likelihood.push_back(ll);
    for (int it = 0; it < opts.max_iterations; ++it) {
        // E-step: responsibility of component 0.
        for (std::size_t i = 0; i < n; ++i) resp[i] = posterior_small(fit, losses[i]);
        // M-step.
        double w[2] = {0, 0}, mu[2] = {0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            w[0] += resp[i];
            w[1] += 1.0 - resp[i];
            mu[0] += resp[i] * losses[i];
            mu[1] += (1.0 - resp[i]) * losses[i];
        }
        MixtureFit next = fit;
        for (int c = 0; c < 2; ++c) {
            if (w[c] <= 0.0) continue;  // empty component keeps its parameters
            next.means[c] = mu[c] / w[c];
        }
        double var[2] = {0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            const double d0 = losses[i] - next.means[0], d1 = losses[i] - next.means[1];
            var[0] += resp[i] * d0 * d0;
            var[1] += (1.0 - resp[i]) * d1 * d1;
        }
        for (int c = 0; c < 2; ++c) {
            if (w[c] <= 0.0) continue;
            next.variances[c] = std::max(var[c] / w[c], opts.variance_floor);
            next.weights[c] = w[c] / static_cast<double>(n);
        }
        fit = std::move(next);
        fit.iterations = it + 1;
        const double new_ll = gmm_log_likelihood(fit, losses);
        fit.log_likelihood.push_back(new_ll);
        const double gain = new_ll - ll;
        ll = new_ll;
        if (gain < opts.tolerance) {
            fit.converged = true;
            break;
        }
    }
    if (fit.means[0] > fit.means[1]) {
        std::swap(fit.means[0], fit.means[1]);
        std::swap(fit.variances[0], fit.variances[1]);
        std::swap(fit.weights[0], fit.weights[1]);
    }
    return fit;
}

double posterior_small(const MixtureFit& fit, double loss) {
    const double a = std::log(fit.weights[0]) + log_normal_pdf(loss, fit.means[0], fit.variances[0]);
    const double b = std::log(fit.weights[1]) + log_normal_pdf(loss, fit.means[1], fit.variances[1]);
    const double r = std::exp(a - log_add(a, b));
    return std::isfinite(r) ? r : 0.0;
}

MixtureFit GaussianMixture2::fit(std::span<const double> losses) const { return fit_gmm2(losses, opts_); }

double GaussianMixture2::posterior_small(const MixtureFit& fit, double loss) const {
    return invjoint::posterior_small(fit, loss);
}

std::vector<std::size_t> select_modality_hard(const MixtureFit& fit, std::span<const double> losses, double p,
                                              const LossMixture& family) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < losses.size(); ++i)
        if (family.posterior_small(fit, losses[i]) < p) out.push_back(i);
    return out;
}

std::vector<std::size_t> select_modality_hard(const MixtureFit& fit, std::span<const double> losses, double p) {
    return select_modality_hard(fit, losses, p, GaussianMixture2{});
}

std::vector<std::size_t> select_modality_hard(std::span<const double> losses, double p, const LossMixture& family) {
    try {
        return select_modality_hard(family.fit(losses), losses, p, family);
    } catch (const DegeneracyError&) {
        return {};
    }
}

std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k) {
    if (k > scores.size())
        throw ContractError("top-k with k=" + std::to_string(k) + " over " + std::to_string(scores.size()) + " classes");
    std::vector<std::size_t> idx(scores.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::size_t topk_overlap(std::span<const double> f2, std::span<const double> f3, std::size_t k) {
    if (f2.size() != f3.size()) throw ContractError("top-k overlap: class dimensions differ");
    const auto a = topk_indices(f2, k);
    const auto b = topk_indices(f3, k);
    std::vector<std::size_t> common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
    return common.size();
}

double wrong_class_confidence(std::span<const double> p2, std::span<const double> p3, std::size_t label) {
    if (p2.size() != p3.size() || label >= p2.size()) throw ContractError("wrong_class_confidence: bad shapes");
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < p2.size(); ++i)
        if (i != label) best = std::max(best, p2[i] + p3[i]);
    return best;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw ContractError("quantile of an empty set");
    if (!(q >= 0.0 && q <= 1.0)) throw ContractError("quantile level outside [0,1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SelectionReport select_joint_hard(std::span<const std::size_t> candidates, const ProbMatrix& probs2,
                                  const ProbMatrix& probs3, std::span<const std::size_t> labels, double rho,
                                  std::size_t k) {
    if (!(rho > 0.0 && rho <= 1.0)) throw ContractError("rho must lie in (0,1]");
    if (probs2.rows != probs3.rows || probs2.cols != probs3.cols || labels.size() != probs2.rows)
        throw ContractError("select_joint_hard: probability matrices and labels disagree in shape");
    if (k == 0 || k > probs2.cols) throw ContractError("top-k size must lie in [1, C]");
    SelectionReport rep;
    rep.rho = rho;
    rep.k = k;
    rep.candidates.assign(candidates.begin(), candidates.end());
    std::sort(rep.candidates.begin(), rep.candidates.end());
    rep.candidates.erase(std::unique(rep.candidates.begin(), rep.candidates.end()), rep.candidates.end());
    if (rep.candidates.empty()) return rep;

    const std::size_t m = rep.candidates.size();
    std::vector<double> conf(m);
    std::vector<std::size_t> overlap(m);
    for (std::size_t j = 0; j < m; ++j) {
        const std::size_t i = rep.candidates[j];
        if (i >= labels.size()) throw ContractError("candidate index out of range");
        conf[j] = wrong_class_confidence(probs2.row(i), probs3.row(i), labels[i]);
        overlap[j] = topk_overlap(probs2.row(i), probs3.row(i), k);
    }
    rep.r1 = quantile(conf, 1.0 - rho);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r <= k; ++r) {
        const auto pass = std::count_if(overlap.begin(), overlap.end(), [r](std::size_t o) { return o < r; });
        const double gap = std::abs(static_cast<double>(pass) / static_cast<double>(m) - rho);
        if (gap < best) {
            best = gap;
            rep.r2 = r;
        }
    }
    for (std::size_t j = 0; j < m; ++j)
        if (conf[j] > rep.r1 && overlap[j] < rep.r2) rep.d_joint.push_back(rep.candidates[j]);
    return rep;
}

bool mining_schedule(int epoch, int warmup, int period) {
    if (warmup < 1 || period < 1) throw ContractError("mining warmup and period must be >= 1");
    return epoch >= warmup && (epoch - warmup) % period == 0;
}

std::size_t default_topk(std::size_t classes) {
    if (classes < 2) throw ContractError("need at least two classes");
    return std::min<std::size_t>(5, classes - 1);
}

}  // namespace invjoint
