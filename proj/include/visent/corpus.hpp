#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "visent/kernels.hpp"

namespace visent {

// One labeled think-region segment, [begin, end) over the sample's tokens.
struct SegmentAnnotation {
    int begin = 0;
    int end = 0;
    bool divergent = false;
};

struct PopeItem {
    bool expected_yes = false;
    std::optional<bool> predicted_yes;  // may be derived from the answer span
};

// Generated (or pre-baked) token sequence plus the ground truth needed to
// score it. `tokens` is the full sequence as evaluated; the first
// `prompt_len` tokens are the prompt and generation (when run) starts there.
struct AnnotatedSample {
    std::string id;
    std::vector<int> tokens;
    int prompt_len = 0;
    std::map<int, std::string> display;           // token id -> surface string
    std::set<std::string> truth_objects;           // canonical ground-truth objects
    std::map<std::string, std::string> synonyms;   // surface -> canonical
    std::vector<SegmentAnnotation> segments;       // ordered, non-overlapping
    std::optional<PopeItem> pope;
    std::optional<Matrix> visual;                  // m x d embedding rows, model backends only

    void validate() const;  // throws DataError

    std::string to_json() const;
    static AnnotatedSample from_json(const std::string& line);
};

std::vector<AnnotatedSample> load_corpus(const std::string& path);
void save_corpus(const std::string& path, const std::vector<AnnotatedSample>& corpus);

// Union of every sample's truth objects and synonym targets: the set of
// canonical strings that count as object mentions.
std::set<std::string> object_lexicon(const std::vector<AnnotatedSample>& corpus);

}  // namespace visent
