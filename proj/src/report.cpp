#include <cstdio>
#include <fstream>
#include <sstream>

#include "driftguard/errors.hpp"
#include "driftguard/scenario.hpp"

namespace driftguard::scenario {

std::string records_csv(const RunReport& report) {
    std::string out = "cycle,approach,option_id,pl,ec,utility,rank,ideal_rank\n";
    char buf[256];
    for (const auto& r : report.records) {
        std::snprintf(buf, sizeof buf, "%d,%s,%d,%.6f,%.6f,%.6f,%d,%d\n", r.cycle, report.approach.c_str(), r.option_id,
                      r.quality.packet_loss, r.quality.energy, r.utility, r.rank, r.ideal_rank);
        out += buf;
    }
    return out;
}

std::string series_csv(const RunReport& report) {
    std::vector<metrics::SeriesRow> rows;
    for (const auto& r : report.records) {
        metrics::SeriesRow s;
        s.cycle = r.cycle;
        s.approach = report.approach;
        s.quality = r.quality;
        s.utility = r.utility;
        s.selected_rank = r.rank;
        s.ideal_rank = r.ideal_rank;
        const auto w = static_cast<std::size_t>((r.cycle - 1) / lifelong::kPeriod);
        if (w < report.windows.size()) {
            s.rsm_window_id = report.windows[w].window_id;
            s.rsm = report.windows[w].rsm;
        }
        rows.push_back(s);
    }
    return metrics::series_csv(rows);
}

nlohmann::json to_json(const RunReport& report) {
    using nlohmann::json;
    json records = json::array();
    for (const auto& r : report.records)
        records.push_back({{"cycle", r.cycle},
                           {"option_id", r.option_id},
                           {"pl", r.quality.packet_loss},
                           {"ec", r.quality.energy},
                           {"utility", r.utility},
                           {"rank", r.rank},
                           {"ideal_rank", r.ideal_rank},
                           {"fallback", r.fallback},
                           {"verifications", r.verifications}});
    json windows = json::array();
    for (const auto& w : report.windows)
        windows.push_back({{"window_id", w.window_id},
                           {"first_cycle", w.first_cycle},
                           {"last_cycle", w.last_cycle},
                           {"rsm", w.rsm},
                           {"mean_utility", w.mean_utility},
                           {"mean_pl", w.mean_pl},
                           {"mean_ec", w.mean_ec}});
    json events = json::array();
    for (const auto& e : report.events) events.push_back({{"cycle", e.cycle}, {"kind", e.kind}, {"detail", e.detail}});
    const auto& s = report.summary;
    return {{"schema_version", kSchemaVersion},
            {"approach", report.approach},
            {"spec", report.spec},
            {"ranked_classes", report.ranked_classes},
            {"summary",
             {{"pre_drift_rsm", s.pre_drift_rsm},
              {"drift_rsm", s.drift_rsm},
              {"pre_drift_utility", s.pre_drift_utility},
              {"drift_utility", s.drift_utility},
              {"mean_utility", s.mean_utility},
              {"verifications", s.verifications}}},
            {"windows", windows},
            {"events", events},
            {"records", records}};
}

RunReport report_from_json(const nlohmann::json& j) {
    RunReport r;
    try {
        if (j.at("schema_version").get<int>() != kSchemaVersion)
            throw InvalidInput("report: unsupported schema version");
        r.approach = j.at("approach").get<std::string>();
        r.spec = j.at("spec");
        r.ranked_classes = j.at("ranked_classes").get<int>();
        const auto& s = j.at("summary");
        r.summary.pre_drift_rsm = s.at("pre_drift_rsm").get<double>();
        r.summary.drift_rsm = s.at("drift_rsm").get<double>();
        r.summary.pre_drift_utility = s.at("pre_drift_utility").get<double>();
        r.summary.drift_utility = s.at("drift_utility").get<double>();
        r.summary.mean_utility = s.at("mean_utility").get<double>();
        r.summary.verifications = s.at("verifications").get<std::size_t>();
        for (const auto& w : j.at("windows"))
            r.windows.push_back({w.at("window_id").get<int>(), w.at("first_cycle").get<int>(),
                                 w.at("last_cycle").get<int>(), w.at("rsm").get<double>(),
                                 w.at("mean_utility").get<double>(), w.at("mean_pl").get<double>(),
                                 w.at("mean_ec").get<double>()});
        for (const auto& e : j.at("events"))
            r.events.push_back({e.at("cycle").get<int>(), e.at("kind").get<std::string>(), e.at("detail")});
        for (const auto& x : j.at("records")) {
            CycleRecord c;
            c.cycle = x.at("cycle").get<int>();
            c.approach = r.approach;
            c.option_id = x.at("option_id").get<int>();
            c.quality = {x.at("pl").get<double>(), x.at("ec").get<double>()};
            c.utility = x.at("utility").get<double>();
            c.rank = x.at("rank").get<int>();
            c.ideal_rank = x.at("ideal_rank").get<int>();
            c.fallback = x.at("fallback").get<bool>();
            c.verifications = x.at("verifications").get<std::size_t>();
            r.records.push_back(c);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("report: ") + e.what());
    }
    return r;
}

RunReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("report " + path + ": " + e.what());
    }
    return report_from_json(j);
}

void export_report(const RunReport& report, const std::string& format, const std::string& path) {
    if (report.records.empty()) throw InvalidInput("export: report has no records");
    std::string body;
    if (format == "csv") body = records_csv(report);
    else if (format == "json") body = to_json(report).dump(1) + "\n";
    else throw InvalidInput("export: unknown format '" + format + "'");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << body;
    if (!out.flush()) throw IoError("write failed for " + path);
}

}  // namespace driftguard::scenario
