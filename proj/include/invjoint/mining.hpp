#pragma once
//
// Joint hard-sample mining.
//
// Per modality, a two-component mixture is fitted to the per-sample CE
// losses; a sample is hard when its responsibility under the small-mean
// ("easy") component falls below p_i. Over the union of per-modality hard
// sets, a sample is jointly hard when
//   (1) max_{i != gt} (p2_i + p3_i) > r1   (confident on a wrong class), and
//   (2) |topk(p2) ∩ topk(p3)| < r2        (the branches disagree),
// with r1, r2 re-derived at every mining epoch so that roughly a fraction rho
// of the candidates passes each criterion.
//

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace invjoint {

struct MixtureFit {
    double means[2] = {0, 0};      // means[0] <= means[1]
    double variances[2] = {1, 1};
    double weights[2] = {0.5, 0.5};
    int iterations = 0;
    bool converged = false;
    std::vector<double> log_likelihood;  // after each EM iteration
};

// Mixture family boundary; the two-component GMM is the shipped family.
class LossMixture {
public:
    virtual ~LossMixture() = default;
    virtual MixtureFit fit(std::span<const double> losses) const = 0;
    // Responsibility of the small-mean component for `loss`.
    virtual double posterior_small(const MixtureFit& fit, double loss) const = 0;
};

struct GmmOptions {
    int max_iterations = 200;
    double tolerance = 1e-8;      // on log-likelihood improvement
    double variance_floor = 1e-6;
};

class GaussianMixture2 final : public LossMixture {
public:
    explicit GaussianMixture2(GmmOptions opts = {}) : opts_(opts) {}
    MixtureFit fit(std::span<const double> losses) const override;
    double posterior_small(const MixtureFit& fit, double loss) const override;

private:
    GmmOptions opts_;
};

// EM for a two-component 1-D GMM, initialised by a median split.
// Throws DegeneracyError for fewer than 4 values or all-identical values.
MixtureFit fit_gmm2(std::span<const double> losses, const GmmOptions& opts = {});
double posterior_small(const MixtureFit& fit, double loss);
double gmm_log_likelihood(const MixtureFit& fit, std::span<const double> values);

// Indices whose small-component responsibility is strictly below p.
std::vector<std::size_t> select_modality_hard(const MixtureFit& fit, std::span<const double> losses, double p,
                                              const LossMixture& family);
std::vector<std::size_t> select_modality_hard(const MixtureFit& fit, std::span<const double> losses, double p);
// Fits first; a degenerate fit yields the empty set.
std::vector<std::size_t> select_modality_hard(std::span<const double> losses, double p,
                                              const LossMixture& family = GaussianMixture2{});

// Top-k class indices, ties to the smaller index.
std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k);
std::size_t topk_overlap(std::span<const double> f2, std::span<const double> f3, std::size_t k);

// Row-major [n, C] probabilities.
struct ProbMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;
    std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
};

struct SelectionReport {
    std::vector<std::size_t> d2, d3, candidates, d_joint;  // sample indices, ascending
    double r1 = 0.0;
    std::size_t r2 = 0;
    double p2 = 0.5, p3 = 0.5;
    double rho = 0.25;
    std::size_t k = 5;
    int epoch = -1;
};

// Wrong-class confidence max_{i != gt}(p2_i + p3_i).
double wrong_class_confidence(std::span<const double> p2, std::span<const double> p3, std::size_t label);

// Linear-interpolation quantile of `values` at q in [0,1].
double quantile(std::vector<double> values, double q);

// r1: (1 - rho)-quantile of the wrong-class confidence over candidates.
// r2: the value in {0..k} whose pass fraction |overlap < r2| / |candidates| is
//     closest to rho (smallest on ties).
// Empty candidate set gives an empty report.
SelectionReport select_joint_hard(std::span<const std::size_t> candidates, const ProbMatrix& probs2,
                                  const ProbMatrix& probs3, std::span<const std::size_t> labels, double rho,
                                  std::size_t k);

// Run mining this epoch?  epoch >= warmup and (epoch - warmup) % period == 0.
bool mining_schedule(int epoch, int warmup, int period);

// k for criterion (2): min(5, C - 1).
std::size_t default_topk(std::size_t classes);

}  // namespace invjoint
