#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "visent/decoder.hpp"

namespace visent {

// Trace export: JSONL, one StepTrace per line, tagged with the sample id so
// multi-sample runs share one file.
struct TraceRecord {
    std::string sample_id;
    StepTrace trace;
};

std::string trace_to_json(const std::string& sample_id, const StepTrace& trace);
TraceRecord trace_from_json(const std::string& line);

void save_traces(const std::string& path,
                 const std::vector<std::pair<std::string, std::vector<StepTrace>>>& runs);

// Keyed by sample id; per-sample step order is preserved.
std::map<std::string, std::vector<StepTrace>> load_traces(const std::string& path);

}  // namespace visent
