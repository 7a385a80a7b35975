#include "visent/runner.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include "visent/error.hpp"
#include "visent/rng.hpp"
#include "visent/trace_io.hpp"

namespace visent {

namespace {

using nlohmann::json;

// Ordered parallel map: results land by index, so output never depends on
// scheduling. Exceptions are rethrown on the calling thread.
template <typename F>
void parallel_for(int n, int jobs, F&& body) {
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(jobs));
    for (int w = 0; w < jobs; ++w) {
        workers.emplace_back([&, w] {
            try {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                    body(i);
                }
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (std::thread& t : workers) t.join();
    for (const std::exception_ptr& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::string render_text(const AnnotatedSample& sample, std::span<const int> tokens) {
    std::string text;
    for (const int tok : tokens) {
        if (!text.empty()) text += ' ';
        const auto it = sample.display.find(tok);
        if (it != sample.display.end()) {
            text += it->second;
        } else {
            text += "#" + std::to_string(tok);
        }
    }
    return text;
}

void ensure_out_dir(const std::string& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + out_dir + ": " + ec.message());
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << content;
    if (!out) throw ConfigError("short write to " + path);
}

void flatten_into(const json& node, const std::string& prefix, std::string& out) {
    if (node.is_object()) {
        for (const auto& [key, value] : node.items()) {
            flatten_into(value, prefix.empty() ? key : prefix + "." + key, out);
        }
    } else if (node.is_array()) {
        for (std::size_t i = 0; i < node.size(); ++i) {
            flatten_into(node[i], prefix + "[" + std::to_string(i) + "]", out);
        }
    } else {
        out += prefix;
        out += ',';
        out += node.dump();
        out += '\n';
    }
}

json chair_to_json(const HallucinationReport& report) {
    json j;
    j["chair_s"] = report.chair_s;
    j["chair_i"] = report.chair_i;
    j["samples"] = report.samples;
    j["flagged_samples"] = report.flagged_samples;
    j["mentions"] = report.mentions;
    j["hallucinated_mentions"] = report.hallucinated_mentions;
    return j;
}

json sample_rates_to_json(const HallucinationReport& report) {
    json arr = json::array();
    for (const SampleRates& rates : report.per_sample) {
        json r;
        r["id"] = rates.id;
        if (rates.thinking) r["thinking_rate"] = *rates.thinking;
        if (rates.answering) r["answering_rate"] = *rates.answering;
        arr.push_back(std::move(r));
    }
    return arr;
}

json mode_rates_to_json(const ModeRates& rates) {
    json j;
    j["normal_segments"] = rates.normal_segments;
    j["divergent_segments"] = rates.divergent_segments;
    if (rates.normal) j["normal_rate"] = *rates.normal;
    if (rates.divergent) j["divergent_rate"] = *rates.divergent;
    return j;
}

json unavailable(const std::string& reason) {
    return json{{"available", false}, {"reason", reason}};
}

std::vector<LogisticPoint> logistic_points(
    const std::map<std::string, AnnotatedSample>& by_id,
    const std::map<std::string, std::vector<StepTrace>>& traces) {
    std::vector<LogisticPoint> points;
    for (const auto& [id, steps] : traces) {
        const auto sample_it = by_id.find(id);
        if (sample_it == by_id.end()) continue;
        const AnnotatedSample& sample = sample_it->second;
        for (const StepTrace& step : steps) {
            const int pos = sample.prompt_len + step.step_index;
            for (const SegmentAnnotation& seg : sample.segments) {
                if (pos >= seg.begin && pos < seg.end) {
                    points.push_back(LogisticPoint{step.candidate_entropy, seg.divergent});
                    break;
                }
            }
        }
    }
    return points;
}

json logistic_to_json(const LogisticReport& report) {
    json j;
    j["intercept"] = report.intercept;
    j["slope"] = report.slope;
    j["mcfadden_r2"] = report.mcfadden_r2;
    j["threshold"] = report.threshold;
    j["accuracy"] = report.accuracy;
    j["separated"] = report.separated;
    j["n"] = report.n;
    return j;
}

}  // namespace

BackendSpec parse_backend_spec(const std::string& spec) {
    const std::size_t colon = spec.find(':');
    if (colon == std::string::npos) {
        throw ConfigError("backend spec '" + spec + "' must look like scripted:<path> or "
                          "tiny:<path>");
    }
    const std::string kind = spec.substr(0, colon);
    BackendSpec out;
    out.path = spec.substr(colon + 1);
    if (kind == "scripted") {
        out.kind = BackendSpec::Kind::scripted;
    } else if (kind == "tiny") {
        out.kind = BackendSpec::Kind::tiny;
    } else {
        throw ConfigError("unknown backend kind '" + kind + "' (scripted|tiny)");
    }
    if (out.path.empty()) throw ConfigError("backend spec '" + spec + "' has an empty path");
    return out;
}

void ExperimentConfig::validate() const {
    decoder.validate();
    if (corpus_path.empty()) throw ConfigError("corpus path is required");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    auto check_grid = [](const std::vector<double>& grid, const char* name) {
        if (grid.empty()) throw ConfigError(std::string(name) + " grid must be non-empty");
        double previous = -1.0;
        for (const double v : grid) {
            if (!(v >= 0.0 && v <= 1.0)) {
                throw ConfigError(std::string(name) + " grid value outside [0, 1]");
            }
            if (v <= previous) {
                throw ConfigError(std::string(name) + " grid must be strictly ascending");
            }
            previous = v;
        }
    };
    check_grid(gamma_grid, "gamma");
    check_grid(alpha_grid, "alpha");
    if (sweep_scopes.empty()) throw ConfigError("sweep needs at least one scope");
}

namespace {

// Forwards to a shared backend so one loaded script can serve many samples.
class SharedBackendView : public ModelBackend {
public:
    explicit SharedBackendView(const ModelBackend& inner) : inner_(inner) {}
    std::size_t vocab_size() const override { return inner_.vocab_size(); }
    int eos_token() const override { return inner_.eos_token(); }
    const VisualActivationMatrix& activation_matrix() const override {
        return inner_.activation_matrix();
    }
    VocabDistribution next_distribution(std::span<const int> prefix) const override {
        return inner_.next_distribution(prefix);
    }
    std::optional<AttentionSummary> attention_summary(
        std::span<const int> prefix, const AttentionSpans& spans) const override {
        return inner_.attention_summary(prefix, spans);
    }

private:
    const ModelBackend& inner_;
};

}  // namespace

BackendFactory::BackendFactory(const BackendSpec& spec) {
    if (spec.kind == BackendSpec::Kind::scripted) {
        scripted_ = ScriptedBackend::load(spec.path);
    } else {
        tiny_ = TinyTransformer::load(spec.path);
    }
}

BackendFactory::BackendFactory(ScriptedBackend scripted) : scripted_(std::move(scripted)) {}

BackendFactory::BackendFactory(TinyTransformer tiny) : tiny_(std::move(tiny)) {}

std::unique_ptr<ModelBackend> BackendFactory::make_session(const AnnotatedSample& sample) const {
    if (scripted_) {
        return std::make_unique<SharedBackendView>(*scripted_);
    }
    const TinyConfig& cfg = tiny_->config();
    Matrix visual;
    if (sample.visual) {
        visual = *sample.visual;
        if (visual.rows != static_cast<std::size_t>(cfg.num_visual_tokens) ||
            visual.cols != static_cast<std::size_t>(cfg.dim)) {
            throw ConfigError("sample " + sample.id + ": visual embeddings are " +
                              std::to_string(visual.rows) + "x" + std::to_string(visual.cols) +
                              ", model expects " + std::to_string(cfg.num_visual_tokens) + "x" +
                              std::to_string(cfg.dim));
        }
    } else {
        visual = derive_visual_embeddings(cfg, fnv1a64(sample.id));
    }
    return std::make_unique<TinySession>(*tiny_, std::move(visual));
}

SampleRun run_sample(const BackendFactory& factory, const AnnotatedSample& sample,
                     const DecoderConfig& decoder_config) {
    if (sample.prompt_len <= 0) {
        throw DataError("sample " + sample.id + ": prompt_len must be positive to generate");
    }
    const std::unique_ptr<ModelBackend> session = factory.make_session(sample);
    DecoderConfig per_sample = decoder_config;
    per_sample.seed = mix_seed(decoder_config.seed, fnv1a64(sample.id));
    const std::span<const int> prompt(sample.tokens.data(),
                                      static_cast<std::size_t>(sample.prompt_len));
    DecodeResult result = decode(*session, prompt, per_sample);

    SampleRun run;
    run.id = sample.id;
    run.prompt_len = sample.prompt_len;
    run.tokens.assign(prompt.begin(), prompt.end());
    run.tokens.insert(run.tokens.end(), result.tokens.begin(), result.tokens.end());
    run.traces = std::move(result.traces);
    return run;
}

GenerateSummary run_generate(const ExperimentConfig& config) {
    config.validate();
    if (config.out_dir.empty()) throw ConfigError("output directory is required");
    const std::vector<AnnotatedSample> corpus = load_corpus(config.corpus_path);
    if (corpus.empty()) throw DataError("corpus " + config.corpus_path + " is empty");
    const BackendFactory factory(config.backend);
    ensure_out_dir(config.out_dir);

    const auto started = std::chrono::steady_clock::now();
    std::vector<SampleRun> runs(corpus.size());
    parallel_for(static_cast<int>(corpus.size()), config.jobs, [&](int i) {
        runs[static_cast<std::size_t>(i)] =
            run_sample(factory, corpus[static_cast<std::size_t>(i)], config.decoder);
    });
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    GenerateSummary summary;
    summary.samples = static_cast<int>(runs.size());
    summary.seconds = seconds;
    summary.generations_path = config.out_dir + "/generations.jsonl";
    summary.traces_path = config.out_dir + "/traces.jsonl";

    std::string generations;
    std::vector<std::pair<std::string, std::vector<StepTrace>>> trace_runs;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const SampleRun& run = runs[i];
        summary.generated_tokens += static_cast<int>(run.tokens.size()) - run.prompt_len;
        json record;
        record["id"] = run.id;
        record["prompt_len"] = run.prompt_len;
        record["tokens"] = run.tokens;
        record["text"] = render_text(corpus[i], run.tokens);
        generations += record.dump();
        generations += '\n';
        trace_runs.emplace_back(run.id, run.traces);
    }
    write_file(summary.generations_path, generations);
    save_traces(summary.traces_path, trace_runs);
    return summary;
}

std::vector<GenerationRecord> load_generations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open generations: " + path);
    std::vector<GenerationRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            GenerationRecord record;
            record.id = j.at("id").get<std::string>();
            record.prompt_len = j.value("prompt_len", 0);
            record.tokens = j.at("tokens").get<std::vector<int>>();
            record.text = j.value("text", "");
            records.push_back(std::move(record));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

std::vector<AnnotatedSample> apply_generations(
    const std::vector<AnnotatedSample>& corpus,
    const std::vector<GenerationRecord>& generations) {
    std::map<std::string, const GenerationRecord*> by_id;
    for (const GenerationRecord& g : generations) by_id[g.id] = &g;
    if (by_id.size() != generations.size()) {
        throw DataError("generations contain duplicate ids");
    }
    std::vector<std::string> missing, orphans;
    std::vector<AnnotatedSample> evaluated;
    std::set<std::string> corpus_ids;
    for (const AnnotatedSample& sample : corpus) {
        corpus_ids.insert(sample.id);
        const auto it = by_id.find(sample.id);
        if (it == by_id.end()) {
            missing.push_back(sample.id);
            continue;
        }
        AnnotatedSample copy = sample;
        copy.tokens = it->second->tokens;
        copy.prompt_len = it->second->prompt_len;
        copy.segments.clear();  // annotations index the corpus tokens, not fresh ones
        evaluated.push_back(std::move(copy));
    }
    for (const GenerationRecord& g : generations) {
        if (!corpus_ids.count(g.id)) orphans.push_back(g.id);
    }
    if (!missing.empty() || !orphans.empty()) {
        std::string msg = "generation/corpus id mismatch;";
        if (!missing.empty()) {
            msg += " corpus ids without generations:";
            for (const std::string& id : missing) msg += " " + id;
            msg += ";";
        }
        if (!orphans.empty()) {
            msg += " generation ids not in corpus:";
            for (const std::string& id : orphans) msg += " " + id;
        }
        throw DataError(msg);
    }
    return evaluated;
}

nlohmann::json run_eval(const std::string& corpus_path, const std::string& generations_path,
                        const std::optional<std::string>& traces_path,
                        const MarkerConfig& markers, const std::string& out_dir) {
    const std::vector<AnnotatedSample> corpus = load_corpus(corpus_path);
    if (corpus.empty()) throw DataError("corpus " + corpus_path + " is empty");
    const std::vector<GenerationRecord> generations = load_generations(generations_path);
    if (generations.empty()) throw DataError("generations " + generations_path + " are empty");
    const std::vector<AnnotatedSample> evaluated = apply_generations(corpus, generations);
    const std::set<std::string> lexicon = object_lexicon(corpus);

    json report;
    report["samples"] = evaluated.size();

    try {
        const HallucinationReport full =
            chair_metrics(evaluated, lexicon, SpanKind::full, markers);
        const HallucinationReport think =
            chair_metrics(evaluated, lexicon, SpanKind::think_only, markers);
        const HallucinationReport answer =
            chair_metrics(evaluated, lexicon, SpanKind::answer_only, markers);
        report["chair"]["full"] = chair_to_json(full);
        report["chair"]["think"] = chair_to_json(think);
        report["chair"]["answer"] = chair_to_json(answer);
        report["chair"]["per_sample"] = sample_rates_to_json(full);
    } catch (const DataError& e) {
        report["chair"] = unavailable(e.what());
    }

    {
        std::vector<PopePair> items;
        int skipped = 0;
        for (const AnnotatedSample& sample : evaluated) {
            if (!sample.pope) continue;
            std::optional<bool> predicted = sample.pope->predicted_yes;
            if (!predicted) predicted = derive_pope_prediction(sample, markers);
            if (!predicted) {
                ++skipped;
                continue;
            }
            items.push_back(PopePair{sample.pope->expected_yes, *predicted});
        }
        if (items.empty()) {
            report["pope"] = unavailable("no POPE-labeled samples with derivable predictions");
        } else {
            const PopeReport pope = pope_metrics(items);
            json p;
            p["accuracy"] = pope.accuracy;
            p["precision"] = pope.precision;
            p["recall"] = pope.recall;
            p["f1"] = pope.f1;
            p["total"] = pope.total;
            p["degenerate"] = pope.degenerate;
            p["skipped"] = skipped;
            report["pope"] = std::move(p);
        }
    }

    try {
        const CorrelationReport corr = hallucination_correlation(evaluated, lexicon, markers);
        report["correlation"] = json{{"pearson_rho", corr.pearson_rho},
                                     {"r_squared", corr.r_squared},
                                     {"n_pairs", corr.n_pairs}};
    } catch (const DataError& e) {
        report["correlation"] = unavailable(e.what());
    }

    // mode rates come from the annotated corpus; segment spans index the
    // corpus tokens, not fresh generations
    try {
        if (lexicon.empty()) throw DataError("empty object lexicon");
        const ModeRates rates = mode_hallucination_rates(corpus, lexicon);
        if (!rates.normal && !rates.divergent) {
            report["mode_rates"] = unavailable("no scorable segments in either mode");
        } else {
            report["mode_rates"] = mode_rates_to_json(rates);
        }
    } catch (const DataError& e) {
        report["mode_rates"] = unavailable(e.what());
    }

    if (traces_path) {
        std::map<std::string, AnnotatedSample> by_id;
        for (const AnnotatedSample& sample : corpus) by_id[sample.id] = sample;
        const auto traces = load_traces(*traces_path);
        const std::vector<LogisticPoint> points = logistic_points(by_id, traces);
        try {
            report["logistic"] = logistic_to_json(logistic_fit(points));
        } catch (const DataError& e) {
            report["logistic"] = unavailable(e.what());
        }
    }

    if (!out_dir.empty()) {
        ensure_out_dir(out_dir);
        write_file(out_dir + "/report.json", report.dump(2) + "\n");
        write_file(out_dir + "/report.csv", flatten_csv(report));
    }
    return report;
}

nlohmann::json run_analyze(const std::string& corpus_path, const std::string& traces_path,
                           const MarkerConfig& markers, const std::string& out_dir) {
    const std::vector<AnnotatedSample> corpus = load_corpus(corpus_path);
    if (corpus.empty()) throw DataError("corpus " + corpus_path + " is empty");
    const auto traces = load_traces(traces_path);
    const std::set<std::string> lexicon = object_lexicon(corpus);

    json report;

    try {
        const CorrelationReport corr = hallucination_correlation(corpus, lexicon, markers);
        report["correlation"] = json{{"pearson_rho", corr.pearson_rho},
                                     {"r_squared", corr.r_squared},
                                     {"n_pairs", corr.n_pairs}};
    } catch (const DataError& e) {
        report["correlation"] = unavailable(e.what());
    }

    try {
        if (lexicon.empty()) throw DataError("empty object lexicon");
        const ModeRates rates = mode_hallucination_rates(corpus, lexicon);
        json j = mode_rates_to_json(rates);
        if (!rates.normal && !rates.divergent) {
            report["mode_rates"] = unavailable("no scorable segments in either mode");
        } else {
            report["mode_rates"] = std::move(j);
        }
    } catch (const DataError& e) {
        report["mode_rates"] = unavailable(e.what());
    }

    {
        std::vector<StepTrace> all;
        for (const auto& [id, steps] : traces) {
            all.insert(all.end(), steps.begin(), steps.end());
        }
        try {
            const AttentionRatioReport att = attention_ratio(all);
            report["attention"] = json{{"image_mass", att.image_mass},
                                       {"think_mass", att.think_mass},
                                       {"answer_tokens", att.answer_tokens}};
        } catch (const DataError& e) {
            report["attention"] = unavailable(e.what());
        }
    }

    {
        std::map<std::string, AnnotatedSample> by_id;
        for (const AnnotatedSample& sample : corpus) by_id[sample.id] = sample;
        const std::vector<LogisticPoint> points = logistic_points(by_id, traces);
        try {
            report["logistic"] = logistic_to_json(logistic_fit(points));
        } catch (const DataError& e) {
            report["logistic"] = unavailable(e.what());
        }
    }

    if (!out_dir.empty()) {
        ensure_out_dir(out_dir);
        write_file(out_dir + "/analysis.json", report.dump(2) + "\n");
        write_file(out_dir + "/analysis.csv", flatten_csv(report));
    }
    return report;
}

std::vector<SweepCell> run_sweep(const ExperimentConfig& config) {
    config.validate();
    const std::vector<AnnotatedSample> corpus = load_corpus(config.corpus_path);
    if (corpus.empty()) throw DataError("corpus " + config.corpus_path + " is empty");
    const BackendFactory factory(config.backend);
    const std::set<std::string> lexicon = object_lexicon(corpus);
    const MarkerConfig markers = config.markers();

    std::vector<InterventionScope> scopes = config.sweep_scopes;
    std::sort(scopes.begin(), scopes.end());
    scopes.erase(std::unique(scopes.begin(), scopes.end()), scopes.end());

    std::vector<SweepCell> cells;
    for (const InterventionScope scope : scopes) {
        for (const double gamma : config.gamma_grid) {
            for (const double alpha : config.alpha_grid) {
                SweepCell cell;
                cell.scope = scope;
                cell.gamma = gamma;
                cell.alpha = alpha;
                try {
                    DecoderConfig decoder = config.decoder;
                    decoder.scope = scope;
                    decoder.gamma = gamma;
                    decoder.alpha = alpha;

                    const auto started = std::chrono::steady_clock::now();
                    std::vector<SampleRun> runs(corpus.size());
                    parallel_for(static_cast<int>(corpus.size()), config.jobs, [&](int i) {
                        runs[static_cast<std::size_t>(i)] =
                            run_sample(factory, corpus[static_cast<std::size_t>(i)], decoder);
                    });
                    const double seconds = std::max(
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                            .count(),
                        1e-9);

                    std::vector<AnnotatedSample> evaluated;
                    evaluated.reserve(corpus.size());
                    int steps = 0, divergent_steps = 0, generated = 0;
                    for (std::size_t i = 0; i < runs.size(); ++i) {
                        AnnotatedSample copy = corpus[i];
                        copy.tokens = runs[i].tokens;
                        copy.prompt_len = runs[i].prompt_len;
                        copy.segments.clear();
                        evaluated.push_back(std::move(copy));
                        generated += static_cast<int>(runs[i].tokens.size()) - runs[i].prompt_len;
                        for (const StepTrace& trace : runs[i].traces) {
                            ++steps;
                            if (trace.divergent) ++divergent_steps;
                        }
                    }
                    const HallucinationReport chair =
                        chair_metrics(evaluated, lexicon, SpanKind::full, markers);
                    cell.chair_s = chair.chair_s;
                    cell.chair_i = chair.chair_i;
                    cell.divergent_fraction =
                        steps > 0 ? static_cast<double>(divergent_steps) / steps : 0.0;
                    cell.tokens_per_second = static_cast<double>(generated) / seconds;
                } catch (const std::exception& e) {
                    throw NumericError("sweep cell scope=" + std::string(to_string(scope)) +
                                       " gamma=" + format_double(gamma) +
                                       " alpha=" + format_double(alpha) + ": " + e.what());
                }
                cells.push_back(cell);
            }
        }
    }

    if (!config.out_dir.empty()) {
        ensure_out_dir(config.out_dir);
        std::string csv = "gamma,alpha,scope,chair_s,chair_i,divergent_fraction,"
                          "tokens_per_second\n";
        json rows = json::array();
        for (const SweepCell& cell : cells) {
            csv += format_double(cell.gamma) + "," + format_double(cell.alpha) + "," +
                   to_string(cell.scope) + "," + format_double(cell.chair_s) + "," +
                   format_double(cell.chair_i) + "," + format_double(cell.divergent_fraction) +
                   "," + format_double(cell.tokens_per_second) + "\n";
            json row;
            row["gamma"] = cell.gamma;
            row["alpha"] = cell.alpha;
            row["scope"] = to_string(cell.scope);
            row["chair_s"] = cell.chair_s;
            row["chair_i"] = cell.chair_i;
            row["divergent_fraction"] = cell.divergent_fraction;
            row["tokens_per_second"] = cell.tokens_per_second;
            rows.push_back(std::move(row));
        }
        write_file(config.out_dir + "/sweep.csv", csv);
        write_file(config.out_dir + "/sweep.json", rows.dump(2) + "\n");
    }
    return cells;
}

std::string format_double(double value) {
    char buf[64];
    const auto result = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, result.ptr);
}

std::string flatten_csv(const nlohmann::json& report) {
    std::string out = "key,value\n";
    flatten_into(report, "", out);
    return out;
}

}  // namespace visent
