#include "visent/scripted_backend.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "visent/error.hpp"

namespace visent {

namespace {

using nlohmann::json;

VocabDistribution dist_from_json(const json& arr) {
    VocabDistribution d;
    d.values = arr.get<std::vector<double>>();
    d.validate();
    return d;
}

AttentionSummary attention_from_json(const json& obj) {
    AttentionSummary a;
    a.image = obj.value("image", 0.0);
    a.think = obj.value("think", 0.0);
    a.other = obj.value("other", 0.0);
    a.validate();
    return a;
}

json attention_to_json(const AttentionSummary& a) {
    return json{{"image", a.image}, {"think", a.think}, {"other", a.other}};
}

}  // namespace

ScriptedBackend::ScriptedBackend(VisualActivationMatrix matrix, std::vector<Program> programs,
                                 int eos)
    : matrix_(std::move(matrix)), programs_(std::move(programs)), eos_(eos) {
    for (Program& prog : programs_) {
        if (!prog.prompt.empty()) prog.offset = prog.prompt.size();
        for (const VocabDistribution& d : prog.steps) {
            if (d.size() != matrix_.vocab_size()) {
                throw ConfigError("scripted backend: step distribution length differs "
                                  "from vocabulary");
            }
            d.validate();
        }
    }
}

ScriptedBackend::ScriptedBackend(VisualActivationMatrix matrix,
                                 std::vector<VocabDistribution> steps,
                                 std::size_t prompt_length, int eos)
    : ScriptedBackend(std::move(matrix),
                      std::vector<Program>{Program{{}, prompt_length, std::move(steps), {}}},
                      eos) {}

ScriptedBackend::Located ScriptedBackend::locate(std::span<const int> prefix) const {
    const Program* best = nullptr;
    for (const Program& prog : programs_) {
        if (prog.prompt.size() > prefix.size()) continue;
        bool match = true;
        for (std::size_t i = 0; i < prog.prompt.size(); ++i) {
            if (prog.prompt[i] != prefix[i]) {
                match = false;
                break;
            }
        }
        if (match && (best == nullptr || prog.prompt.size() > best->prompt.size())) {
            best = &prog;
        }
    }
    if (best == nullptr) {
        throw ScriptExhausted("no scripted program matches the prefix");
    }
    if (prefix.size() < best->offset) {
        throw ConfigError("scripted backend: prefix shorter than the script offset");
    }
    const std::size_t step = prefix.size() - best->offset;
    if (step >= best->steps.size()) {
        throw ScriptExhausted("script exhausted at step " + std::to_string(step));
    }
    return {best, step};
}

VocabDistribution ScriptedBackend::next_distribution(std::span<const int> prefix) const {
    const Located loc = locate(prefix);
    return loc.program->steps[loc.step];
}

std::optional<AttentionSummary> ScriptedBackend::attention_summary(
    std::span<const int> prefix, const AttentionSpans&) const {
    Located loc{nullptr, 0};
    try {
        loc = locate(prefix);
    } catch (const ScriptExhausted&) {
        return std::nullopt;
    }
    if (loc.step >= loc.program->attention.size()) return std::nullopt;
    return loc.program->attention[loc.step];
}

ScriptedBackend ScriptedBackend::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scripted backend json: ") + e.what());
    }
    VisualActivationMatrix matrix =
        VisualActivationMatrix::from_json(j.at("activation_matrix").dump());
    const int eos = j.value("eos_token", -1);

    std::vector<Program> programs;
    auto parse_program = [](const json& src, bool top_level) {
        Program prog;
        if (src.contains("prompt")) prog.prompt = src.at("prompt").get<std::vector<int>>();
        prog.offset = top_level ? src.value("prompt_length", std::size_t{0}) : prog.prompt.size();
        for (const json& step : src.at("steps")) {
            prog.steps.push_back(dist_from_json(step));
        }
        if (src.contains("attention")) {
            for (const json& a : src.at("attention")) {
                prog.attention.push_back(attention_from_json(a));
            }
        }
        return prog;
    };
    if (j.contains("programs")) {
        for (const json& p : j.at("programs")) {
            programs.push_back(parse_program(p, false));
        }
    }
    if (j.contains("steps")) {
        programs.push_back(parse_program(j, true));
    }
    if (programs.empty()) {
        throw ConfigError("scripted backend json: needs \"steps\" or \"programs\"");
    }
    return ScriptedBackend(std::move(matrix), std::move(programs), eos);
}

std::string ScriptedBackend::to_json() const {
    json j;
    j["activation_matrix"] = json::parse(matrix_.to_json());
    j["eos_token"] = eos_;
    json programs = json::array();
    for (const Program& prog : programs_) {
        json p;
        p["prompt"] = prog.prompt;
        if (prog.prompt.empty() && prog.offset > 0) p["prompt_length"] = prog.offset;
        json steps = json::array();
        for (const VocabDistribution& d : prog.steps) steps.push_back(d.values);
        p["steps"] = std::move(steps);
        if (!prog.attention.empty()) {
            json att = json::array();
            for (const AttentionSummary& a : prog.attention) att.push_back(attention_to_json(a));
            p["attention"] = std::move(att);
        }
        programs.push_back(std::move(p));
    }
    j["programs"] = std::move(programs);
    return j.dump();
}

ScriptedBackend ScriptedBackend::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scripted backend file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

void ScriptedBackend::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write scripted backend file: " + path);
    out << to_json() << "\n";
}

}  // namespace visent
