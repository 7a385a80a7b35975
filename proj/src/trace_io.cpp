#include "visent/trace_io.hpp"

#include <fstream>
#include <json.hpp>

#include "visent/error.hpp"

namespace visent {

namespace {

using nlohmann::json;

}  // namespace

std::string trace_to_json(const std::string& sample_id, const StepTrace& trace) {
    json j;
    j["id"] = sample_id;
    j["step_index"] = trace.step_index;
    j["candidate_token"] = trace.candidate_token;
    j["candidate_entropy"] = trace.candidate_entropy;
    j["divergent"] = trace.divergent;
    j["intervened"] = trace.intervened;
    j["selected_token"] = trace.selected_token;
    j["segment"] = to_string(trace.segment);
    j["degenerate_row"] = trace.degenerate_row;
    j["marker_violation"] = trace.marker_violation;
    if (trace.attention) {
        j["attention"] = json{{"image", trace.attention->image},
                              {"think", trace.attention->think},
                              {"other", trace.attention->other}};
    }
    return j.dump();
}

TraceRecord trace_from_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw DataError(std::string("trace line: ") + e.what());
    }
    TraceRecord record;
    try {
        record.sample_id = j.at("id").get<std::string>();
        StepTrace& t = record.trace;
        t.step_index = j.at("step_index").get<int>();
        t.candidate_token = j.at("candidate_token").get<int>();
        t.candidate_entropy = j.at("candidate_entropy").get<double>();
        t.divergent = j.at("divergent").get<bool>();
        t.intervened = j.at("intervened").get<bool>();
        t.selected_token = j.at("selected_token").get<int>();
        t.segment = segment_from_string(j.at("segment").get<std::string>());
        t.degenerate_row = j.at("degenerate_row").get<bool>();
        t.marker_violation = j.value("marker_violation", false);
        if (j.contains("attention")) {
            AttentionSummary a;
            a.image = j.at("attention").value("image", 0.0);
            a.think = j.at("attention").value("think", 0.0);
            a.other = j.at("attention").value("other", 0.0);
            t.attention = a;
        }
    } catch (const json::exception& e) {
        throw DataError("trace line (" + record.sample_id + "): " + e.what());
    }
    return record;
}

void save_traces(const std::string& path,
                 const std::vector<std::pair<std::string, std::vector<StepTrace>>>& runs) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write traces: " + path);
    for (const auto& [id, traces] : runs) {
        for (const StepTrace& trace : traces) {
            out << trace_to_json(id, trace) << "\n";
        }
    }
}

std::map<std::string, std::vector<StepTrace>> load_traces(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open traces: " + path);
    std::map<std::string, std::vector<StepTrace>> traces;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            TraceRecord record = trace_from_json(line);
            traces[record.sample_id].push_back(record.trace);
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return traces;
}

}  // namespace visent
