#pragma once
//
// Synthetic two-modality testbed.
//
// Every sample has a modality-invariant part z_c (class mean + noise, shared
// by the 3D vector and all 2D views) followed by a modality-specific
// confounder part z_d drawn around a per-(modality, class) mean. A planted
// hard sample has its confounders drawn around the means of two different
// wrong classes, r_2D != r_3D, so each branch is pulled towards its own
// wrong answer.
//

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace invjoint {

struct GeneratorConfig {
    std::size_t classes = 10;
    std::size_t shots = 16;  // samples per class per split
    std::size_t invariant_dims = 8;
    std::size_t confounder_dims = 8;
    double sigma_c = 0.3;
    double sigma_d = 0.1;
    double p_conflict = 0.25;
    std::size_t views = 4;
    std::uint64_t seed = 0;

    std::size_t feature_dim() const { return invariant_dims + confounder_dims; }
    void validate() const;
    bool operator==(const GeneratorConfig&) const = default;
};

struct Sample {
    std::vector<double> x3;                  // [d_c + d_d]
    std::vector<std::vector<double>> views;  // N x [d_c + d_d]
    std::size_t label = 0;
    bool planted_hard = false;
    std::optional<std::pair<std::size_t, std::size_t>> hard_targets;  // (r_2D, r_3D)

    bool operator==(const Sample&) const = default;
};

enum class Split { Train, Test };

struct Dataset {
    GeneratorConfig config;
    std::vector<std::vector<double>> class_means;                  // C x d_c
    std::vector<std::vector<std::vector<double>>> confounder_means; // [2D=0, 3D=1] x C x d_d
    std::vector<Sample> train;
    std::vector<Sample> test;

    const std::vector<Sample>& split(Split s) const { return s == Split::Train ? train : test; }
    bool has_metadata() const { return !class_means.empty(); }
    bool operator==(const Dataset&) const = default;
};

Dataset generate(const GeneratorConfig& cfg);

struct AugmentConfig {
    double scale_lo = 0.8;
    double scale_hi = 1.25;
    double jitter_sigma = 0.15;  // default sigma_c / 2
    double coord_perturb = 0.1;  // per-coordinate multiplicative factor in [1-a, 1+a]
};

// Global scaling, additive jitter and a sign-preserving per-coordinate
// perturbation. Deterministic in `seed`.
std::vector<double> augment_3d(const std::vector<double>& x3, const AugmentConfig& cfg, std::uint64_t seed);

// N fresh views drawn independently around the sample's 2D feature (the mean
// of its stored views) with isotropic noise `view_sigma`.
std::vector<std::vector<double>> augment_2d(const Sample& sample, std::size_t views, double view_sigma,
                                            std::uint64_t seed);

// Nearest class mean on the invariant coordinates only.
double bayes_oracle(const Dataset& data, Split split = Split::Test);
std::size_t nearest_mean(const std::vector<std::vector<double>>& means, const double* x);

// ---------------------------------------------------------------------------
// Persistence. Binary: little-endian f64/u64. Text: one token per value with
// 17 significant digits. Both round-trip byte-stable through load -> save.
// ---------------------------------------------------------------------------

enum class DataFormat { Binary, Text };

std::string serialize_dataset(const Dataset& data, DataFormat format);
Dataset deserialize_dataset(const std::string& bytes);
void save_dataset(const Dataset& data, const std::string& path, DataFormat format = DataFormat::Binary);
Dataset load_dataset(const std::string& path);
// Per-class / per-split counts and config echo.
std::string dataset_manifest(const Dataset& data);

}  // namespace invjoint
