#include "invjoint/metrics.hpp"

#include <sstream>

#include "invjoint/errors.hpp"

namespace invjoint {

using nlohmann::json;

const std::vector<std::string>& metrics_fields() {
    static const std::vector<std::string> fields = {
        "epoch",         "lr",         "steps",       "inv_steps",   "align_steps",      "loss_total",
        "loss_ce",       "loss_inv",   "loss_align",  "acc2",        "acc3",             "acc_joint",
        "c_err",         "confusion2", "confusion3",  "confusion_joint", "gate_weights", "hard_set_size",
        "hard_set_planted", "selection"};
    return fields;
}

json to_json(const ConfusionMatrix& cm) {
    json rows = json::array();
    for (std::size_t i = 0; i < cm.classes; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < cm.classes; ++j) row.push_back(cm.at(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json to_json(const SelectionReport& rep) {
    return {{"epoch", rep.epoch},   {"d2", rep.d2}, {"d3", rep.d3},     {"candidates", rep.candidates},
            {"d_joint", rep.d_joint}, {"r1", rep.r1}, {"r2", rep.r2},   {"p2", rep.p2},
            {"p3", rep.p3},         {"rho", rep.rho}, {"k", rep.k}};
}

json to_json(const MetricsRecord& r) {
    json j;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["steps"] = r.steps;
    j["inv_steps"] = r.inv_steps;
    j["align_steps"] = r.align_steps;
    j["loss_total"] = r.loss_total;
    j["loss_ce"] = r.loss_ce;
    j["loss_inv"] = r.loss_inv;
    j["loss_align"] = r.loss_align;
    j["acc2"] = r.acc2;
    j["acc3"] = r.acc3;
    j["acc_joint"] = r.acc_joint;
    j["c_err"] = r.c_err;
    j["confusion2"] = to_json(r.confusion2);
    j["confusion3"] = to_json(r.confusion3);
    j["confusion_joint"] = to_json(r.confusion_joint);
    j["gate_weights"] = r.gate_weights;
    j["hard_set_size"] = r.hard_set_size;
    j["hard_set_planted"] = r.hard_set_planted;
    j["selection"] = r.selection ? to_json(*r.selection) : json(nullptr);
    return j;
}

std::string metrics_log_header() {
    json h = {{"format", "invjoint-metrics"}, {"version", kMetricsLogVersion}, {"fields", metrics_fields()}};
    return h.dump() + "\n";
}

std::string metrics_log_line(const MetricsRecord& rec) { return to_json(rec).dump() + "\n"; }

std::string metrics_log(const std::vector<MetricsRecord>& records) {
    std::string out = metrics_log_header();
    for (const auto& r : records) out += metrics_log_line(r);
    return out;
}

ParsedMetricsLog parse_metrics_log(const std::string& text) {
    ParsedMetricsLog out;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw LoadError("metrics log is empty");
    try {
        out.header = json::parse(line);
    } catch (const json::parse_error& e) {
        throw LoadError(std::string("metrics log header is not JSON: ") + e.what());
    }
    if (out.header.value("format", "") != "invjoint-metrics") throw LoadError("not a metrics log");
    if (out.header.value("version", 0) != kMetricsLogVersion) throw LoadError("unsupported metrics log version");
    const auto fields = out.header.at("fields").get<std::vector<std::string>>();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw LoadError("metrics log line " + std::to_string(lineno) + ": " + e.what());
        }
        for (const auto& f : fields)
            if (!rec.contains(f))
                throw LoadError("metrics log line " + std::to_string(lineno) + " lacks field '" + f + "'");
        out.records.push_back(std::move(rec));
    }
    return out;
}

}  // namespace invjoint
