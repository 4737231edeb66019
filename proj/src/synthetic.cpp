#include "invjoint/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "invjoint/errors.hpp"
#include "invjoint/rng.hpp"
#include "invjoint/serial.hpp"

namespace invjoint {

void GeneratorConfig::validate() const {
    if (classes < 2) throw ContractError("generator needs at least two classes");
    if (!(p_conflict >= 0.0 && p_conflict <= 1.0)) throw ContractError("p_conflict must lie in [0,1]");
    if (p_conflict > 0.0 && classes < 3)
        throw ContractError("planting conflicts needs C >= 3 (two distinct wrong classes)");
    if (shots == 0 || views == 0) throw ContractError("shots and views must be positive");
    if (invariant_dims == 0 || confounder_dims == 0) throw ContractError("feature blocks must be non-empty");
    if (!(sigma_c >= 0.0) || !(sigma_d >= 0.0)) throw ContractError("noise scales must be non-negative");
}

namespace {

std::vector<double> unit_gaussian(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double n = 0.0;
    do {
        n = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            n += x * x;
        }
    } while (n == 0.0);
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
}

std::size_t draw_other(Rng& rng, std::size_t classes, std::size_t a, std::size_t b) {
    std::size_t r;
    do {
        r = static_cast<std::size_t>(rng.below(classes));
    } while (r == a || r == b);
    return r;
}

Sample draw_sample(const Dataset& d, std::size_t label, Rng& rng) {
    const auto& cfg = d.config;
    Sample s;
    s.label = label;
    std::vector<double> zc(cfg.invariant_dims);
    for (std::size_t j = 0; j < zc.size(); ++j) zc[j] = d.class_means[label][j] + cfg.sigma_c * rng.normal();

    std::size_t target2 = label, target3 = label;
    if (rng.uniform() < cfg.p_conflict) {
        target2 = draw_other(rng, cfg.classes, label, label);
        target3 = draw_other(rng, cfg.classes, label, target2);
        s.planted_hard = true;
        s.hard_targets = std::make_pair(target2, target3);
    }
    auto confounder = [&](std::size_t modality, std::size_t target) {
        std::vector<double> zd(cfg.confounder_dims);
        for (std::size_t j = 0; j < zd.size(); ++j)
            zd[j] = d.confounder_means[modality][target][j] + cfg.sigma_d * rng.normal();
        return zd;
    };
    const auto zd2 = confounder(0, target2);
    const auto zd3 = confounder(1, target3);

    s.x3 = zc;
    s.x3.insert(s.x3.end(), zd3.begin(), zd3.end());
    std::vector<double> base2 = zc;
    base2.insert(base2.end(), zd2.begin(), zd2.end());
    const double view_sigma = cfg.sigma_c / 2.0;
    for (std::size_t v = 0; v < cfg.views; ++v) {
        std::vector<double> view = base2;
        for (auto& x : view) x += view_sigma * rng.normal();
        s.views.push_back(std::move(view));
    }
    return s;
}

}  // namespace

Dataset generate(const GeneratorConfig& cfg) {
    cfg.validate();
    Dataset d;
    d.config = cfg;
    Rng meta(mix_seed(cfg.seed, 0));
    for (std::size_t c = 0; c < cfg.classes; ++c) d.class_means.push_back(unit_gaussian(meta, cfg.invariant_dims));
    d.confounder_means.resize(2);
    for (std::size_t e = 0; e < 2; ++e)
        for (std::size_t c = 0; c < cfg.classes; ++c)
            d.confounder_means[e].push_back(unit_gaussian(meta, cfg.confounder_dims));

    // One independent stream per (split, class) keeps generation order-free.
    for (std::size_t split = 0; split < 2; ++split) {
        auto& out = split == 0 ? d.train : d.test;
        for (std::size_t c = 0; c < cfg.classes; ++c) {
            Rng rng(mix_seed(cfg.seed, 1 + split * cfg.classes + c));
            for (std::size_t k = 0; k < cfg.shots; ++k) out.push_back(draw_sample(d, c, rng));
        }
    }
    return d;
}

std::vector<double> augment_3d(const std::vector<double>& x3, const AugmentConfig& cfg, std::uint64_t seed) {
    if (cfg.coord_perturb < 0.0 || cfg.coord_perturb >= 1.0)
        throw ContractError("coordinate perturbation must lie in [0,1) to preserve signs");
    Rng rng(seed);
    const double s = cfg.scale_lo == cfg.scale_hi ? cfg.scale_lo : rng.uniform(cfg.scale_lo, cfg.scale_hi);
    std::vector<double> out(x3.size());
    for (std::size_t j = 0; j < x3.size(); ++j) {
        const double factor = cfg.coord_perturb > 0.0 ? 1.0 + cfg.coord_perturb * rng.uniform(-1.0, 1.0) : 1.0;
        const double jitter = cfg.jitter_sigma > 0.0 ? cfg.jitter_sigma * rng.normal() : 0.0;
        out[j] = s * x3[j] * factor + jitter;
    }
    return out;
}

std::vector<std::vector<double>> augment_2d(const Sample& sample, std::size_t views, double view_sigma,
                                            std::uint64_t seed) {
    if (views == 0) throw ContractError("augment_2d needs N >= 1");
    if (sample.views.empty()) throw ContractError("sample has no 2D views");
    const std::size_t dim = sample.views[0].size();
    std::vector<double> center(dim, 0.0);
    for (const auto& v : sample.views)
        for (std::size_t j = 0; j < dim; ++j) center[j] += v[j] / static_cast<double>(sample.views.size());
    Rng rng(seed);
    std::vector<std::vector<double>> out;
    for (std::size_t v = 0; v < views; ++v) {
        auto view = center;
        if (view_sigma > 0.0)
            for (auto& x : view) x += view_sigma * rng.normal();
        out.push_back(std::move(view));
    }
    return out;
}

std::size_t nearest_mean(const std::vector<std::vector<double>>& means, const double* x) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < means.size(); ++c) {
        double d = 0.0;
        for (std::size_t j = 0; j < means[c].size(); ++j) d += (x[j] - means[c][j]) * (x[j] - means[c][j]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

double bayes_oracle(const Dataset& data, Split split) {
    if (!data.has_metadata()) throw ContractError("bayes_oracle needs generator metadata (class means)");
    const auto& samples = data.split(split);
    if (samples.empty()) throw ContractError("bayes_oracle on an empty split");
    std::size_t ok = 0;
    for (const auto& s : samples) ok += nearest_mean(data.class_means, s.x3.data()) == s.label;
    return static_cast<double>(ok) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kDatasetVersion = 1;
constexpr std::uint64_t kNoTarget = std::numeric_limits<std::uint64_t>::max();

void write_samples(serial::Writer& w, const char* section, const std::vector<Sample>& samples) {
    w.section(section);
    w.u64(samples.size());
    for (const auto& s : samples) {
        w.u64(s.label);
        w.u64(s.planted_hard ? 1 : 0);
        w.u64(s.hard_targets ? s.hard_targets->first : kNoTarget);
        w.u64(s.hard_targets ? s.hard_targets->second : kNoTarget);
        w.f64s(s.x3);
        for (const auto& v : s.views) w.f64s(v);
        w.end_record();
    }
}

std::vector<Sample> read_samples(serial::Reader& r, const char* section, const GeneratorConfig& cfg) {
    r.expect_section(section);
    const auto count = r.u64();
    if (count > (1u << 26)) throw LoadError(std::string("implausible sample count in section ") + section);
    std::vector<Sample> out(count);
    for (auto& s : out) {
        s.label = r.u64();
        if (s.label >= cfg.classes) throw LoadError(std::string("label out of range in section ") + section);
        s.planted_hard = r.u64() != 0;
        const auto t2 = r.u64(), t3 = r.u64();
        if (t2 != kNoTarget || t3 != kNoTarget) s.hard_targets = std::make_pair(t2, t3);
        s.x3 = r.f64s(cfg.feature_dim());
        for (std::size_t v = 0; v < cfg.views; ++v) s.views.push_back(r.f64s(cfg.feature_dim()));
    }
    return out;
}

}  // namespace

std::string serialize_dataset(const Dataset& data, DataFormat format) {
    serial::Writer w(format == DataFormat::Binary ? serial::Mode::Binary : serial::Mode::Text, "IVJDATA");
    const auto& c = data.config;
    w.section("HEADER");
    w.u64(kDatasetVersion);
    w.u64(c.classes);
    w.u64(c.shots);
    w.u64(c.invariant_dims);
    w.u64(c.confounder_dims);
    w.u64(c.views);
    w.u64(c.seed);
    w.f64(c.sigma_c);
    w.f64(c.sigma_d);
    w.f64(c.p_conflict);
    w.end_record();
    w.section("META");
    w.u64(data.has_metadata() ? 1 : 0);
    if (data.has_metadata()) {
        for (const auto& m : data.class_means) w.f64s(m);
        for (const auto& e : data.confounder_means)
            for (const auto& m : e) w.f64s(m);
    }
    w.end_record();
    write_samples(w, "TRAIN", data.train);
    write_samples(w, "TEST", data.test);
    w.section("END");
    return w.str();
}

Dataset deserialize_dataset(const std::string& bytes) {
    serial::Reader r(bytes, "IVJDATA");
    Dataset d;
    auto& c = d.config;
    r.expect_section("HEADER");
    const auto version = r.u64();
    if (version != kDatasetVersion) throw LoadError("unsupported dataset version " + std::to_string(version));
    c.classes = r.u64();
    c.shots = r.u64();
    c.invariant_dims = r.u64();
    c.confounder_dims = r.u64();
    c.views = r.u64();
    c.seed = r.u64();
    c.sigma_c = r.f64();
    c.sigma_d = r.f64();
    c.p_conflict = r.f64();
    try {
        c.validate();
    } catch (const ContractError& e) {
        throw LoadError(std::string("invalid dataset header: ") + e.what());
    }
    r.expect_section("META");
    if (r.u64() != 0) {
        for (std::size_t k = 0; k < c.classes; ++k) d.class_means.push_back(r.f64s(c.invariant_dims));
        d.confounder_means.resize(2);
        for (auto& e : d.confounder_means)
            for (std::size_t k = 0; k < c.classes; ++k) e.push_back(r.f64s(c.confounder_dims));
    }
    d.train = read_samples(r, "TRAIN", c);
    d.test = read_samples(r, "TEST", c);
    r.expect_section("END");
    return d;
}

void save_dataset(const Dataset& data, const std::string& path, DataFormat format) {
    serial::write_file(path, serialize_dataset(data, format));
}

Dataset load_dataset(const std::string& path) { return deserialize_dataset(serial::read_file(path)); }

std::string dataset_manifest(const Dataset& data) {
    const auto& c = data.config;
    std::ostringstream os;
    os << "synthetic two-modality dataset\n"
       << "seed " << c.seed << "\nclasses " << c.classes << "\nshots " << c.shots << "\ninvariant_dims "
       << c.invariant_dims << "\nconfounder_dims " << c.confounder_dims << "\nviews " << c.views << "\nsigma_c "
       << c.sigma_c << "\nsigma_d " << c.sigma_d << "\np_conflict " << c.p_conflict << "\n\n";
    for (auto split : {Split::Train, Split::Test}) {
        const auto& samples = data.split(split);
        std::vector<std::size_t> per_class(c.classes, 0), planted(c.classes, 0);
        for (const auto& s : samples) {
            ++per_class[s.label];
            planted[s.label] += s.planted_hard;
        }
        os << (split == Split::Train ? "[train]" : "[test]") << " samples " << samples.size() << '\n';
        os << "class,count,planted_hard\n";
        for (std::size_t k = 0; k < c.classes; ++k) os << k << ',' << per_class[k] << ',' << planted[k] << '\n';
        os << '\n';
    }
    return os.str();
}

}  // namespace invjoint
