#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unlearn/engines.hpp"
#include "unlearn/eval.hpp"

namespace unlearn {

struct BenchmarkConfig {
    std::vector<std::string> methods{"retrain", "finetune", "revgrad", "sisa", "deepcut"};
    std::vector<double> fractions{0.01, 0.10};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    ModelConfig model;
    TrainConfig train;
};

struct BenchmarkResult {
    std::vector<MetricsReport> cells;            // one per (method, fraction, seed)
    std::vector<MetricsReport> averaged;         // one per (method, fraction), mean over seeds
    nlohmann::json provenance;                   // resolved configuration echo
};

namespace detail {

// Seam for tests: wraps every metrics evaluation the benchmark performs.
using EvalHook = std::function<void()>;

template <typename Model>
MetricsReport evaluate_cell(const Model& model, const TokenDataset& ds, const UnlearnRequest& req,
                            const ModelCheckpoint* exact, const EvalHook& hook) {
    MetricsReport r;
    int outside = ds.labels.outside();
    auto retained = retained_sentences(ds, req);
    auto forgot = forget_sentences(ds, req);
    if (hook) hook();
    r.retained = evaluate_split(model, retained, outside);
    if (hook) hook();
    r.forget = evaluate_split(model, forgot, outside);
    if (hook) hook();
    r.test = evaluate_split(model, ds.test, outside);
    if (exact) {
        if (hook) hook();
        auto [agree, tv] = model_agreement(model, *exact, ds.test);
        r.agreement = agree;
        r.tv_distance = tv;
    }
    return r;
}

inline MetricsReport average_reports(const std::vector<const MetricsReport*>& rs) {
    MetricsReport avg;
    if (rs.empty()) return avg;
    avg.method = rs[0]->method;
    avg.fraction = rs[0]->fraction;
    avg.agreement = 0.0;  // default is 1.0; reset before accumulating
    double n = static_cast<double>(rs.size());
    for (const auto* r : rs) {
        avg.retained.precision += r->retained.precision / n;
        avg.retained.recall += r->retained.recall / n;
        avg.retained.f1 += r->retained.f1 / n;
        avg.forget.precision += r->forget.precision / n;
        avg.forget.recall += r->forget.recall / n;
        avg.forget.f1 += r->forget.f1 / n;
        avg.test.precision += r->test.precision / n;
        avg.test.recall += r->test.recall / n;
        avg.test.f1 += r->test.f1 / n;
        avg.agreement += r->agreement / n;
        avg.tv_distance += r->tv_distance / n;
        avg.seconds += r->seconds / n;
    }
    return avg;
}

}  // namespace detail

// Full grid {method x fraction x seed}. The original model (and, when
// requested, the SISA ensemble) is trained once per seed and excluded from
// unlearning wall-clock; the retrained reference M_exact is always computed
// per (seed, fraction) for the agreement metrics. Failed cells are recorded
// and skipped.
inline BenchmarkResult run_benchmark(const TokenDataset& ds, const BenchmarkConfig& bc,
                                     std::ostream* log = nullptr,
                                     const detail::EvalHook& eval_hook = nullptr) {
    if (bc.methods.empty() || bc.seeds.empty() || bc.fractions.empty())
        throw ParameterError("run_benchmark: methods, fractions and seeds must be nonempty");
    for (const auto& m : bc.methods)
        if (m != "retrain" && m != "finetune" && m != "revgrad" && m != "sisa" && m != "deepcut")
            throw ParameterError("run_benchmark: unknown method " + m);

    bool wants_sisa = false;
    for (const auto& m : bc.methods) wants_sisa = wants_sisa || m == "sisa";

    BenchmarkResult result;
    std::size_t failures = 0, total = 0;
    for (std::uint64_t seed : bc.seeds) {
        TrainConfig tc = bc.train;
        tc.seed = seed;
        if (log) (*log) << "seed " << seed << ": training original model\n";
        TrainResult original = train_model(ds, bc.model, tc);
        SisaEnsemble ensemble;
        if (wants_sisa) {
            if (log) (*log) << "seed " << seed << ": training sisa ensemble\n";
            ensemble = sisa_train(ds, static_cast<int>(tc.sisa_shards), bc.model, tc);
        }
        for (double fraction : bc.fractions) {
            UnlearnRequest req = select_forget(ds, fraction, seed);
            if (log) (*log) << "seed " << seed << " fraction " << fraction << ": retrain reference\n";
            UnlearnOutcome exact = unlearn_retrain(ds, req, bc.model, tc);
            for (const auto& method : bc.methods) {
                ++total;
                MetricsReport cell;
                cell.method = method;
                cell.fraction = fraction;
                cell.seed = seed;
                try {
                    if (log) (*log) << "seed " << seed << " fraction " << fraction << ": " << method << "\n";
                    if (method == "retrain") {
                        cell = detail::evaluate_cell(exact.model, ds, req, &exact.model, eval_hook);
                        cell.seconds = exact.seconds;
                        cell.steps = exact.steps;
                    } else if (method == "sisa") {
                        UnlearnOutcome o = sisa_unlearn(ensemble, ds, req, bc.model, tc);
                        cell = detail::evaluate_cell(*o.ensemble, ds, req, &exact.model, eval_hook);
                        cell.seconds = o.seconds;
                        cell.steps = o.steps;
                    } else {
                        UnlearnOutcome o = method == "finetune"
                                               ? unlearn_finetune(original.checkpoint, ds, req, tc)
                                           : method == "revgrad"
                                               ? unlearn_reverse_gradient(original.checkpoint, ds, req, tc)
                                               : unlearn_deepcut(original.checkpoint, ds, req, tc);
                        cell = detail::evaluate_cell(o.model, ds, req, &exact.model, eval_hook);
                        cell.seconds = o.seconds;
                        cell.steps = o.steps;
                    }
                    cell.method = method;
                    cell.fraction = fraction;
                    cell.seed = seed;
                } catch (const std::exception& e) {
                    cell.failed = true;
                    cell.error = e.what();
                    ++failures;
                }
                result.cells.push_back(std::move(cell));
            }
        }
    }
    if (failures == total) throw TrainingError("run_benchmark: every grid cell failed");

    for (const auto& method : bc.methods)
        for (double fraction : bc.fractions) {
            std::vector<const MetricsReport*> group;
            for (const auto& c : result.cells)
                if (!c.failed && c.method == method && c.fraction == fraction) group.push_back(&c);
            if (!group.empty()) result.averaged.push_back(detail::average_reports(group));
        }
    return result;
}

// ---------------------------------------------------------------------------
// Report emission: results.json, table.csv, timing.tsv
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json metrics_json(const SplitMetrics& m) {
    return {{"precision", m.precision}, {"recall", m.recall},   {"micro_f1", m.f1},
            {"tokens", m.tokens},       {"degenerate", m.degenerate}};
}

inline nlohmann::json report_json(const MetricsReport& r, bool with_seed) {
    nlohmann::json j{{"method", r.method}, {"fraction", r.fraction},
                     {"retained", metrics_json(r.retained)}, {"forget", metrics_json(r.forget)},
                     {"test", metrics_json(r.test)},         {"agreement", r.agreement},
                     {"tv_distance", r.tv_distance},         {"seconds", r.seconds},
                     {"steps", r.steps}};
    if (with_seed) j["seed"] = r.seed;
    if (r.failed) j["error"] = r.error;
    return j;
}

inline std::string fmt6(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

}  // namespace detail

inline void emit_reports(const BenchmarkResult& result, const std::string& out_dir) {
    if (result.cells.empty()) throw ParameterError("emit_reports: no reports to emit");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);

    nlohmann::json root;
    root["config"] = result.provenance;
    root["cells"] = nlohmann::json::array();
    for (const auto& c : result.cells) root["cells"].push_back(detail::report_json(c, true));
    root["averaged"] = nlohmann::json::array();
    for (const auto& a : result.averaged) root["averaged"].push_back(detail::report_json(a, false));
    {
        std::ofstream os(out_dir + "/results.json");
        if (!os) throw PersistenceError("emit_reports: cannot write " + out_dir + "/results.json");
        os << root.dump(2) << "\n";
    }
    {
        std::ofstream os(out_dir + "/table.csv");
        if (!os) throw PersistenceError("emit_reports: cannot write " + out_dir + "/table.csv");
        os << "method,fraction,retained_f1,test_f1,forget_f1,agreement,tv,seconds\n";
        for (const auto& a : result.averaged)
            os << a.method << "," << detail::fmt6(a.fraction) << "," << detail::fmt6(a.retained.f1) << ","
               << detail::fmt6(a.test.f1) << "," << detail::fmt6(a.forget.f1) << ","
               << detail::fmt6(a.agreement) << "," << detail::fmt6(a.tv_distance) << ","
               << detail::fmt6(a.seconds) << "\n";
    }
    {
        std::ofstream os(out_dir + "/timing.tsv");
        if (!os) throw PersistenceError("emit_reports: cannot write " + out_dir + "/timing.tsv");
        std::map<std::string, std::pair<double, int>> by_method;
        for (const auto& a : result.averaged) {
            auto& [sum, n] = by_method[a.method];
            sum += a.seconds;
            ++n;
        }
        for (const auto& [method, acc] : by_method)
            os << method << "\t" << detail::fmt6(acc.first / acc.second) << "\n";
    }
}

}  // namespace unlearn
