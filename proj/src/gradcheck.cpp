#include "invjoint/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "invjoint/errors.hpp"
#include "invjoint/losses.hpp"
#include "invjoint/rng.hpp"

namespace invjoint {

namespace {

double rel_error(double a, double n, double floor) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

Tensor uniform(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), true);
}

// Labels over `classes` in which every class occurs at least twice.
std::vector<std::size_t> paired_labels(std::size_t m, std::size_t classes, Rng& rng) {
    std::vector<std::size_t> labels(m);
    for (std::size_t i = 0; i < m; ++i) labels[i] = (i / 2) % classes;
    for (std::size_t i = m; i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);
    return labels;
}

ContrastiveBatch random_batch(const Tensor& features, Rng& rng) {
    const std::size_t m = features.dim(0);
    ContrastiveBatch b;
    b.features = features;
    b.labels = paired_labels(m, 2 + rng.below(2), rng);
    for (std::size_t i = 0; i < m; ++i)
        if (rng.uniform() < 0.6 || i == 0) b.anchors.push_back(i);
    return b;
}

}  // namespace

double gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs, double eps, double floor) {
    for (const auto& t : inputs)
        if (!t.is_leaf() || !t.requires_grad()) throw ContractError("gradcheck inputs must be leaves requiring grad");
    for (auto t : inputs) t.zero_grad();
    const Tensor loss = f(inputs);
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const auto& t : inputs) {
        if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
        else analytic.emplace_back(t.numel(), 0.0);
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor t = inputs[k];
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double orig = t.data()[i];
            t.mutable_data()[i] = orig + eps;
            const double up = f(inputs).item();
            t.mutable_data()[i] = orig - eps;
            const double down = f(inputs).item();
            t.mutable_data()[i] = orig;
            worst = std::max(worst, rel_error(analytic[k][i], (up - down) / (2 * eps), floor));
        }
    }
    return worst;
}

std::vector<GradcheckCase> run_gradcheck_suite(const GradcheckOptions& opts) {
    std::vector<GradcheckCase> out;
    Rng rng(mix_seed(opts.seed, 0x6c));

    auto run = [&](const std::string& name, double tol, const std::function<double(Rng&)>& one) {
        GradcheckCase c{name, opts.configs, 0.0, tol, false};
        for (int i = 0; i < opts.configs; ++i) c.max_rel_error = std::max(c.max_rel_error, one(rng));
        c.passed = c.max_rel_error < tol;
        out.push_back(c);
    };

    run("cross_entropy", opts.tolerance, [&](Rng& r) {
        const std::size_t n = 2 + r.below(5), classes = 2 + r.below(6);
        std::vector<std::size_t> labels(n);
        for (auto& l : labels) l = r.below(classes);
        return gradcheck([&](const std::vector<Tensor>& in) { return mean(cross_entropy(in[0], labels)); },
                         {uniform({n, classes}, r)}, opts.eps, opts.floor);
    });

    run("sup_infonce", opts.tolerance, [&](Rng& r) {
        const std::size_t m = 4 + r.below(5), d = 2 + r.below(4);
        const Tensor feats = uniform({m, d}, r);
        const Tensor theta = uniform({1}, r, 0.5, 2.0);
        ContrastiveBatch b = random_batch(feats, r);
        return gradcheck(
            [&](const std::vector<Tensor>& in) {
                ContrastiveBatch bb = b;
                bb.features = in[0];
                return sup_infonce(bb, in[1]);
            },
            {feats, theta}, opts.eps, opts.floor);
    });

    auto env_case = [&](IrmVariant variant) {
        return [&, variant](Rng& r) {
            const std::size_t d = 2 + r.below(4);
            const std::size_t envs = 2 + r.below(2);
            std::vector<Tensor> feats;
            std::vector<ContrastiveBatch> batches;
            for (std::size_t e = 0; e < envs; ++e) {
                feats.push_back(uniform({4 + r.below(4), d}, r));
                batches.push_back(random_batch(feats.back(), r));
            }
            IRMConfig cfg;
            cfg.variant = variant;
            cfg.lambda = r.uniform(0.1, 5.0);
            cfg.lambda_min = r.uniform(0.0, 1.0 / static_cast<double>(envs));
            cfg.beta = r.uniform(0.0, 3.0);
            return gradcheck(
                [&](const std::vector<Tensor>& in) {
                    std::vector<ContrastiveBatch> bs = batches;
                    for (std::size_t e = 0; e < bs.size(); ++e) bs[e].features = in[e];
                    return modality_irm_loss(bs, cfg).total;
                },
                feats, opts.eps, opts.floor);
        };
    };
    run("invariance_irmv1", opts.tolerance, env_case(IrmVariant::IRMv1));
    run("mm_rex", opts.tolerance, env_case(IrmVariant::MMREx));
    run("v_rex", opts.tolerance, env_case(IrmVariant::VREx));

    run("nt_xent_align", opts.tolerance, [&](Rng& r) {
        const std::size_t n = 2 + r.below(5), d = 2 + r.below(4);
        const double tau = r.uniform(0.5, 10.0);
        return gradcheck([&](const std::vector<Tensor>& in) { return nt_xent_align(in[0], in[1], tau); },
                         {uniform({n, d}, r), uniform({n, d}, r)}, opts.eps, opts.floor);
    });

    run("irm_grad_theta", opts.theta_tolerance, [&](Rng& r) {
        const std::size_t m = 4 + r.below(5), d = 2 + r.below(4);
        const ContrastiveBatch b = random_batch(uniform({m, d}, r), r);
        const double analytic = irm_grad_theta(b).item();
        const double up = sup_infonce(b, 1.0 + opts.eps).item();
        const double down = sup_infonce(b, 1.0 - opts.eps).item();
        return rel_error(analytic, (up - down) / (2 * opts.eps), opts.floor);
    });
    return out;
}

}  // namespace invjoint
