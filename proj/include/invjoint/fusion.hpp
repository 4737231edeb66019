#pragma once
//
// Joint inference and evaluation metrics.
//

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace invjoint {

enum class FusionMode { Multiplicative, Additive };
const char* fusion_mode_name(FusionMode m);  // "mul" / "add"
FusionMode parse_fusion_mode(const std::string& s);

struct FusionConfig {
    double phi = 0.1;  // 2D temperature
    FusionMode mode = FusionMode::Multiplicative;
    bool renormalize = false;

    void validate() const;
};

std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

// Multiplicative: softmax(f2 / phi) * softmax(f3), elementwise.
// Additive:       softmax(f2 / phi) + softmax(f3).
std::vector<double> fuse(std::span<const double> f2, std::span<const double> f3, const FusionConfig& cfg);

// argmax, ties to the smaller index.
std::size_t predict(std::span<const double> scores);

// |(T2 \ TJ) ∪ (T3 \ TJ)| / |T|
double conflict_ratio(std::span<const std::size_t> preds2, std::span<const std::size_t> preds3,
                      std::span<const std::size_t> preds_joint, std::span<const std::size_t> labels);

// Row-major C x C, entry (i, j) counts label i predicted as j.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::size_t> counts;
    std::size_t at(std::size_t label, std::size_t pred) const { return counts[label * classes + pred]; }
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                                 std::size_t classes);

struct EvalRecord {
    std::vector<std::size_t> labels, pred2, pred3, pred_joint;
    double acc2 = 0, acc3 = 0, acc_joint = 0, c_err = 0;
    ConfusionMatrix confusion2, confusion3, confusion_joint;
};

// Builds the full record from per-sample branch logits (row-major [n, C]).
EvalRecord evaluate_logits(std::span<const double> logits2, std::span<const double> logits3,
                           std::span<const std::size_t> labels, std::size_t classes, const FusionConfig& cfg);

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels);

// index,label,pred2,pred3,pred_joint
std::string per_sample_csv(const EvalRecord& rec);
std::string confusion_csv(const ConfusionMatrix& cm);
// Re-tallies the aggregates from the per-sample CSV text.
EvalRecord tally_per_sample_csv(const std::string& csv, std::size_t classes);

}  // namespace invjoint
