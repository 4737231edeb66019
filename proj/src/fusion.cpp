#include "invjoint/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "invjoint/errors.hpp"

namespace invjoint {

const char* fusion_mode_name(FusionMode m) { return m == FusionMode::Multiplicative ? "mul" : "add"; }

FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "mul" || s == "multiplicative") return FusionMode::Multiplicative;
    if (s == "add" || s == "additive") return FusionMode::Additive;
    throw ContractError("unknown fusion mode '" + s + "' (expected mul or add)");
}

void FusionConfig::validate() const {
    if (!(phi > 0) || !std::isfinite(phi)) throw ContractError("fusion temperature phi must be positive");
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    for (double v : logits)
        if (!std::isfinite(v)) throw NumericError("non-finite logit");
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) s += (out[i] = std::exp((logits[i] - m) / temperature));
    for (auto& v : out) v /= s;
    return out;
}

std::vector<double> fuse(std::span<const double> f2, std::span<const double> f3, const FusionConfig& cfg) {
    cfg.validate();
    if (f2.size() != f3.size() || f2.empty()) throw ContractError("fuse: class dimensions differ");
    const auto p2 = softmax(f2, cfg.phi);
    const auto p3 = softmax(f3);
    std::vector<double> out(p2.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = cfg.mode == FusionMode::Multiplicative ? p2[i] * p3[i] : p2[i] + p3[i];
    if (cfg.renormalize) {
        double s = 0.0;
        for (double v : out) s += v;
        if (s > 0)
            for (auto& v : out) v /= s;
    }
    return out;
}

std::size_t predict(std::span<const double> scores) {
    if (scores.empty()) throw ContractError("predict over no classes");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

double conflict_ratio(std::span<const std::size_t> preds2, std::span<const std::size_t> preds3,
                      std::span<const std::size_t> preds_joint, std::span<const std::size_t> labels) {
    const std::size_t n = labels.size();
    if (n == 0 || preds2.size() != n || preds3.size() != n || preds_joint.size() != n)
        throw ContractError("conflict_ratio: sequences must share a non-zero length");
    std::size_t conflicts = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const bool joint_ok = preds_joint[i] == labels[i];
        if (!joint_ok && (preds2[i] == labels[i] || preds3[i] == labels[i])) ++conflicts;
    }
    return static_cast<double>(conflicts) / static_cast<double>(n);
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                                 std::size_t classes) {
    if (preds.size() != labels.size()) throw ContractError("confusion_matrix: length mismatch");
    ConfusionMatrix cm{classes, std::vector<std::size_t>(classes * classes, 0)};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] >= classes || labels[i] >= classes) throw ContractError("confusion_matrix: class id out of range");
        ++cm.counts[labels[i] * classes + preds[i]];
    }
    return cm;
}

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
    if (preds.size() != labels.size() || labels.empty()) throw ContractError("accuracy: length mismatch");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i] == labels[i];
    return static_cast<double>(ok) / static_cast<double>(labels.size());
}

namespace {
void fill_aggregates(EvalRecord& rec, std::size_t classes) {
    rec.acc2 = accuracy(rec.pred2, rec.labels);
    rec.acc3 = accuracy(rec.pred3, rec.labels);
    rec.acc_joint = accuracy(rec.pred_joint, rec.labels);
    rec.c_err = conflict_ratio(rec.pred2, rec.pred3, rec.pred_joint, rec.labels);
    rec.confusion2 = confusion_matrix(rec.pred2, rec.labels, classes);
    rec.confusion3 = confusion_matrix(rec.pred3, rec.labels, classes);
    rec.confusion_joint = confusion_matrix(rec.pred_joint, rec.labels, classes);
}
}  // namespace

EvalRecord evaluate_logits(std::span<const double> logits2, std::span<const double> logits3,
                           std::span<const std::size_t> labels, std::size_t classes, const FusionConfig& cfg) {
    const std::size_t n = labels.size();
    if (logits2.size() != n * classes || logits3.size() != n * classes)
        throw ContractError("evaluate_logits: logits do not match [n, C]");
    EvalRecord rec;
    rec.labels.assign(labels.begin(), labels.end());
    for (std::size_t i = 0; i < n; ++i) {
        const auto f2 = logits2.subspan(i * classes, classes);
        const auto f3 = logits3.subspan(i * classes, classes);
        rec.pred2.push_back(predict(f2));
        rec.pred3.push_back(predict(f3));
        rec.pred_joint.push_back(predict(fuse(f2, f3, cfg)));
    }
    fill_aggregates(rec, classes);
    return rec;
}

std::string per_sample_csv(const EvalRecord& rec) {
    std::ostringstream os;
    os << "index,label,pred2,pred3,pred_joint\n";
    for (std::size_t i = 0; i < rec.labels.size(); ++i)
        os << i << ',' << rec.labels[i] << ',' << rec.pred2[i] << ',' << rec.pred3[i] << ',' << rec.pred_joint[i]
           << '\n';
    return os.str();
}

std::string confusion_csv(const ConfusionMatrix& cm) {
    std::ostringstream os;
    for (std::size_t i = 0; i < cm.classes; ++i) {
        for (std::size_t j = 0; j < cm.classes; ++j) os << (j ? "," : "") << cm.at(i, j);
        os << '\n';
    }
    return os.str();
}

EvalRecord tally_per_sample_csv(const std::string& csv, std::size_t classes) {
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line) || line != "index,label,pred2,pred3,pred_joint")
        throw LoadError("per-sample CSV: unexpected header");
    EvalRecord rec;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::size_t v[5];
        char comma;
        ls >> v[0] >> comma >> v[1] >> comma >> v[2] >> comma >> v[3] >> comma >> v[4];
        if (!ls) throw LoadError("per-sample CSV: malformed row '" + line + "'");
        rec.labels.push_back(v[1]);
        rec.pred2.push_back(v[2]);
        rec.pred3.push_back(v[3]);
        rec.pred_joint.push_back(v[4]);
    }
    fill_aggregates(rec, classes);
    return rec;
}

}  // namespace invjoint
