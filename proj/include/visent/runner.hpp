#pragma once

#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "visent/corpus.hpp"
#include "visent/decoder.hpp"
#include "visent/eval.hpp"
#include "visent/scripted_backend.hpp"
#include "visent/tiny_transformer.hpp"

namespace visent {

struct BackendSpec {
    enum class Kind { scripted, tiny };
    Kind kind = Kind::scripted;
    std::string path;
};

// "scripted:<path>" or "tiny:<path>".
BackendSpec parse_backend_spec(const std::string& spec);

struct ExperimentConfig {
    BackendSpec backend;
    std::string corpus_path;
    std::string out_dir;
    DecoderConfig decoder;
    int jobs = 1;
    std::vector<double> gamma_grid{0.5};
    std::vector<double> alpha_grid{0.75};
    std::vector<InterventionScope> sweep_scopes{InterventionScope::divergent_only};

    MarkerConfig markers() const {
        return {decoder.think_open, decoder.think_close, decoder.answer_open};
    }
    void validate() const;  // throws ConfigError
};

// Loads backend files once and hands out per-sample sessions. Tiny sessions
// bind the sample's visual embeddings (from the corpus, or derived from the
// model seed and sample id); scripted sessions share the loaded script.
class BackendFactory {
public:
    explicit BackendFactory(const BackendSpec& spec);
    BackendFactory(ScriptedBackend scripted);
    BackendFactory(TinyTransformer tiny);

    std::unique_ptr<ModelBackend> make_session(const AnnotatedSample& sample) const;

private:
    std::optional<ScriptedBackend> scripted_;
    std::optional<TinyTransformer> tiny_;
};

struct SampleRun {
    std::string id;
    int prompt_len = 0;
    std::vector<int> tokens;  // prompt + generated
    std::vector<StepTrace> traces;
};

// Decode one sample; the per-sequence seed mixes the configured seed with
// the sample id so results do not depend on scheduling.
SampleRun run_sample(const BackendFactory& factory, const AnnotatedSample& sample,
                     const DecoderConfig& decoder);

struct GenerationRecord {
    std::string id;
    int prompt_len = 0;
    std::vector<int> tokens;
    std::string text;
};

std::vector<GenerationRecord> load_generations(const std::string& path);

struct GenerateSummary {
    int samples = 0;
    int generated_tokens = 0;
    double seconds = 0.0;
    std::string generations_path;
    std::string traces_path;
};

// Writes <out>/generations.jsonl and <out>/traces.jsonl.
GenerateSummary run_generate(const ExperimentConfig& config);

// Applies generated sequences onto the corpus annotations; ids must match
// one to one (orphans on either side raise DataError).
std::vector<AnnotatedSample> apply_generations(const std::vector<AnnotatedSample>& corpus,
                                               const std::vector<GenerationRecord>& generations);

// Writes <out>/report.json and <out>/report.csv; returns the report.
nlohmann::json run_eval(const std::string& corpus_path, const std::string& generations_path,
                        const std::optional<std::string>& traces_path,
                        const MarkerConfig& markers, const std::string& out_dir);

// Writes <out>/analysis.json and <out>/analysis.csv; returns the report.
nlohmann::json run_analyze(const std::string& corpus_path, const std::string& traces_path,
                           const MarkerConfig& markers, const std::string& out_dir);

struct SweepCell {
    InterventionScope scope = InterventionScope::none;
    double gamma = 0.0;
    double alpha = 0.0;
    double chair_s = 0.0;
    double chair_i = 0.0;
    double divergent_fraction = 0.0;
    double tokens_per_second = 0.0;
};

// Full grid over (scope, gamma, alpha); writes <out>/sweep.csv and
// <out>/sweep.json. Rows are ordered by (scope, gamma, alpha).
std::vector<SweepCell> run_sweep(const ExperimentConfig& config);

// Shortest-round-trip decimal formatting (used for CSV cells).
std::string format_double(double value);

// Flat key,value CSV view of a JSON report.
std::string flatten_csv(const nlohmann::json& report);

}  // namespace visent
