#include "visent/corpus.hpp"

#include <fstream>
#include <json.hpp>

#include "visent/error.hpp"

namespace visent {

namespace {

using nlohmann::json;

}  // namespace

void AnnotatedSample::validate() const {
    if (id.empty()) throw DataError("sample: empty id");
    if (prompt_len < 0 || prompt_len > static_cast<int>(tokens.size())) {
        throw DataError("sample " + id + ": prompt_len outside the token sequence");
    }
    int previous_end = 0;
    bool first = true;
    for (const SegmentAnnotation& seg : segments) {
        if (seg.begin < 0 || seg.end < seg.begin ||
            seg.end > static_cast<int>(tokens.size())) {
            throw DataError("sample " + id + ": segment span out of range");
        }
        if (!first && seg.begin < previous_end) {
            throw DataError("sample " + id + ": segments overlap or are unordered");
        }
        previous_end = seg.end;
        first = false;
    }
}

std::string AnnotatedSample::to_json() const {
    json j;
    j["id"] = id;
    j["tokens"] = tokens;
    if (prompt_len > 0) j["prompt_len"] = prompt_len;
    json display_obj = json::object();
    for (const auto& [tok, text] : display) {
        display_obj[std::to_string(tok)] = text;
    }
    j["display"] = std::move(display_obj);
    j["truth_objects"] = truth_objects;
    j["synonyms"] = synonyms;
    json segs = json::array();
    for (const SegmentAnnotation& seg : segments) {
        segs.push_back(json::array({seg.begin, seg.end, seg.divergent ? "divergent" : "normal"}));
    }
    j["segments"] = std::move(segs);
    if (pope) {
        json p;
        p["expected"] = pope->expected_yes ? "yes" : "no";
        if (pope->predicted_yes) p["predicted"] = *pope->predicted_yes ? "yes" : "no";
        j["pope"] = std::move(p);
    }
    if (visual) {
        json rows = json::array();
        for (std::size_t r = 0; r < visual->rows; ++r) {
            json row = json::array();
            for (std::size_t c = 0; c < visual->cols; ++c) row.push_back(visual->at(r, c));
            rows.push_back(std::move(row));
        }
        j["visual"] = std::move(rows);
    }
    return j.dump();
}

AnnotatedSample AnnotatedSample::from_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw DataError(std::string("corpus line: ") + e.what());
    }
    AnnotatedSample s;
    try {
        s.id = j.at("id").get<std::string>();
        s.tokens = j.value("tokens", std::vector<int>{});
        s.prompt_len = j.value("prompt_len", 0);
        if (j.contains("display")) {
            for (const auto& [key, value] : j.at("display").items()) {
                s.display[std::stoi(key)] = value.get<std::string>();
            }
        }
        if (j.contains("truth_objects")) {
            for (const auto& obj : j.at("truth_objects")) {
                s.truth_objects.insert(obj.get<std::string>());
            }
        }
        if (j.contains("synonyms")) {
            for (const auto& [key, value] : j.at("synonyms").items()) {
                s.synonyms[key] = value.get<std::string>();
            }
        }
        if (j.contains("segments")) {
            for (const auto& seg : j.at("segments")) {
                SegmentAnnotation a;
                a.begin = seg.at(0).get<int>();
                a.end = seg.at(1).get<int>();
                const std::string mode = seg.at(2).get<std::string>();
                if (mode != "normal" && mode != "divergent") {
                    throw DataError("sample " + s.id + ": unknown segment mode '" + mode + "'");
                }
                a.divergent = mode == "divergent";
                s.segments.push_back(a);
            }
        }
        if (j.contains("pope")) {
            PopeItem p;
            const std::string expected = j.at("pope").at("expected").get<std::string>();
            p.expected_yes = expected == "yes";
            if (j.at("pope").contains("predicted")) {
                p.predicted_yes = j.at("pope").at("predicted").get<std::string>() == "yes";
            }
            s.pope = p;
        }
        if (j.contains("visual")) {
            const auto& rows = j.at("visual");
            const std::size_t r = rows.size();
            const std::size_t c = r > 0 ? rows.at(0).size() : 0;
            Matrix visual(r, c);
            for (std::size_t i = 0; i < r; ++i) {
                const auto& row = rows.at(i);
                if (row.size() != c) throw DataError("sample " + s.id + ": ragged visual rows");
                for (std::size_t k = 0; k < c; ++k) visual.at(i, k) = row.at(k).get<double>();
            }
            s.visual = std::move(visual);
        }
    } catch (const json::exception& e) {
        throw DataError("corpus line (" + s.id + "): " + e.what());
    }
    s.validate();
    return s;
}

std::vector<AnnotatedSample> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open corpus: " + path);
    std::vector<AnnotatedSample> corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            corpus.push_back(AnnotatedSample::from_json(line));
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return corpus;
}

void save_corpus(const std::string& path, const std::vector<AnnotatedSample>& corpus) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write corpus: " + path);
    for (const AnnotatedSample& s : corpus) {
        out << s.to_json() << "\n";
    }
}

std::set<std::string> object_lexicon(const std::vector<AnnotatedSample>& corpus) {
    std::set<std::string> lexicon;
    for (const AnnotatedSample& s : corpus) {
        lexicon.insert(s.truth_objects.begin(), s.truth_objects.end());
        for (const auto& [surface, canonical] : s.synonyms) {
            lexicon.insert(canonical);
        }
    }
    return lexicon;
}

}  // namespace visent
