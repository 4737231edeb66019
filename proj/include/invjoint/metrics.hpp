#pragma once
//
// Per-epoch metrics and the line-delimited log: a header object naming the
// format, version and field list, then one object per epoch.
//

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "invjoint/fusion.hpp"
#include "invjoint/mining.hpp"

namespace invjoint {

struct MetricsRecord {
    int epoch = 0;
    double lr = 0.0;
    std::size_t steps = 0;
    std::size_t inv_steps = 0;    // steps on which the invariance term was applied
    std::size_t align_steps = 0;
    double loss_total = 0.0;  // means over the steps that carried each term
    double loss_ce = 0.0;
    double loss_inv = 0.0;
    double loss_align = 0.0;
    double acc2 = 0.0, acc3 = 0.0, acc_joint = 0.0, c_err = 0.0;
    ConfusionMatrix confusion2, confusion3, confusion_joint;
    std::vector<double> gate_weights;
    std::size_t hard_set_size = 0;     // samples eligible for the invariance term this epoch
    std::size_t hard_set_planted = 0;  // of which planted by the generator
    std::optional<SelectionReport> selection;  // mining epochs only
};

inline constexpr int kMetricsLogVersion = 1;
const std::vector<std::string>& metrics_fields();

nlohmann::json to_json(const MetricsRecord& rec);
nlohmann::json to_json(const SelectionReport& rep);
nlohmann::json to_json(const ConfusionMatrix& cm);

std::string metrics_log_header();
std::string metrics_log_line(const MetricsRecord& rec);
std::string metrics_log(const std::vector<MetricsRecord>& records);

struct ParsedMetricsLog {
    nlohmann::json header;
    std::vector<nlohmann::json> records;
};
// Validates the header and that every record carries every declared field.
ParsedMetricsLog parse_metrics_log(const std::string& text);

}  // namespace invjoint
