#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "helpers.hpp"
#include "unlearn/bench.hpp"
#include "unlearn/eval.hpp"

namespace unlearn {

// Fixed per-token class distribution; lets agreement tests pin both argmax
// and total-variation outcomes exactly.
struct ConstModel {
    std::vector<double> dist;
};

inline std::vector<std::vector<double>> predict_distribution(const ConstModel& m, const Sentence& s) {
    return std::vector<std::vector<double>>(s.length(), m.dist);
}

}  // namespace unlearn

using namespace unlearn;

TEST_CASE("micro-f1 worked examples") {
    // labels: 0 = O, 1 = PER, 2 = LOC
    std::vector<double> ones(3, 1.0);
    SplitMetrics perfect = token_micro_f1({1, 0, 2}, {1, 0, 2}, ones, 0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);
    CHECK_FALSE(perfect.degenerate);

    // one entity found, one missed: P = 1, R = 1/2, F1 = 2/3
    SplitMetrics m = token_micro_f1({1, 0, 0}, {1, 0, 2}, ones, 0);
    CHECK(m.precision == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.recall == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    // wrong entity class is both a false positive and a false negative
    SplitMetrics w = token_micro_f1({2}, {1}, {1.0}, 0);
    CHECK(w.precision == 0.0);
    CHECK(w.recall == 0.0);
    CHECK(w.f1 == 0.0);
    CHECK_FALSE(w.degenerate);

    // no entities anywhere: degenerate, reported as zeros with the flag set
    SplitMetrics d = token_micro_f1({0, 0}, {0, 0}, {1.0, 1.0}, 0);
    CHECK(d.degenerate);
    CHECK(d.precision == 0.0);
    CHECK(d.recall == 0.0);
    CHECK(d.f1 == 0.0);

    // masked positions do not count
    SplitMetrics mk = token_micro_f1({1, 2}, {1, 1}, {1.0, 0.0}, 0);
    CHECK(mk.f1 == 1.0);
    CHECK(mk.tokens == 1);

    CHECK_THROWS_AS(token_micro_f1({1}, {1, 0}, {1.0, 1.0}, 0), ContractError);
    CHECK_THROWS_AS(token_micro_f1({1, 0}, {1, 0}, {1.0}, 0), ContractError);
}

TEST_CASE("micro-f1 matches a confusion-matrix oracle exhaustively") {
    // every (prediction, gold) assignment of 4 tokens over 3 classes
    const int C = 3, L = 4, outside = 0;
    const int combos = 81;  // 3^4
    auto decode = [&](int code) {
        std::vector<int> v(L);
        for (int i = 0; i < L; ++i) {
            v[static_cast<std::size_t>(i)] = code % C;
            code /= C;
        }
        return v;
    };
    std::vector<double> ones(L, 1.0);
    for (int pc = 0; pc < combos; ++pc)
        for (int gc = 0; gc < combos; ++gc) {
            auto pred = decode(pc), gold = decode(gc);
            // independent oracle: full confusion matrix, then micro counts
            long cm[C][C] = {};
            for (int i = 0; i < L; ++i) cm[pred[static_cast<std::size_t>(i)]][gold[static_cast<std::size_t>(i)]]++;
            long tp = 0, fp = 0, fn = 0;
            for (int p = 0; p < C; ++p)
                for (int g = 0; g < C; ++g) {
                    if (p == outside && g == outside) continue;
                    if (p == g) tp += cm[p][g];
                    else {
                        if (p != outside) fp += cm[p][g];
                        if (g != outside) fn += cm[p][g];
                    }
                }
            SplitMetrics m = token_micro_f1(pred, gold, ones, outside);
            if (tp + fp + fn == 0) {
                CHECK(m.degenerate);
                continue;
            }
            double prec = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
            double rec = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
            double f1 = prec + rec == 0 ? 0.0 : 2 * prec * rec / (prec + rec);
            CHECK(m.precision == prec);
            CHECK(m.recall == rec);
            CHECK(m.f1 == f1);
        }
}

TEST_CASE("model agreement endpoints") {
    TokenDataset ds = testutil::tiny_dataset(8, 5);
    ConstModel a{{0.7, 0.2, 0.1}};
    ConstModel same = a;
    auto [agree, tv] = model_agreement(a, same, ds.test);
    CHECK(agree == 1.0);
    CHECK(tv == 0.0);

    // disjoint one-hot distributions: zero agreement, maximal TV
    ConstModel b{{0.0, 0.0, 1.0}};
    ConstModel c{{0.0, 1.0, 0.0}};
    auto [agree2, tv2] = model_agreement(b, c, ds.test);
    CHECK(agree2 == 0.0);
    CHECK(tv2 == doctest::Approx(1.0).epsilon(1e-15));

    // a real checkpoint agrees perfectly with itself
    ModelConfig mc = testutil::tiny_model_config(ds);
    Rng init(0);
    ModelCheckpoint ckpt = init_parameters(mc, init);
    auto [agree3, tv3] = model_agreement(ckpt, ckpt, ds.test);
    CHECK(agree3 == 1.0);
    CHECK(tv3 == 0.0);

    CHECK_THROWS_AS(model_agreement(ConstModel{{0.5, 0.5}}, a, ds.test), ContractError);
}

TEST_CASE("report averaging is the arithmetic mean") {
    MetricsReport r1, r2, r3;
    r1.method = r2.method = r3.method = "finetune";
    r1.fraction = r2.fraction = r3.fraction = 0.1;
    r1.retained.f1 = 0.9; r2.retained.f1 = 0.6; r3.retained.f1 = 0.3;
    r1.forget.f1 = 0.2;   r2.forget.f1 = 0.5;   r3.forget.f1 = 0.8;
    r1.test.precision = 0.25; r2.test.precision = 0.5; r3.test.precision = 1.0;
    r1.agreement = 1.0;   r2.agreement = 0.5;   r3.agreement = 0.0;
    r1.tv_distance = 0.0; r2.tv_distance = 0.3; r3.tv_distance = 0.6;
    r1.seconds = 1.0;     r2.seconds = 2.0;     r3.seconds = 6.0;
    MetricsReport avg = detail::average_reports({&r1, &r2, &r3});
    CHECK(avg.method == "finetune");
    CHECK(avg.retained.f1 == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(avg.forget.f1 == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(avg.test.precision == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
    CHECK(avg.agreement == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(avg.tv_distance == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(avg.seconds == doctest::Approx(3.0).epsilon(1e-12));
}

namespace {

BenchmarkResult tiny_benchmark(const detail::EvalHook& hook) {
    TokenDataset ds = testutil::tiny_dataset(24, 1);
    BenchmarkConfig bc;
    bc.methods = {"retrain", "finetune"};
    bc.fractions = {0.25};
    bc.seeds = {0};
    bc.model = testutil::tiny_model_config(ds);
    bc.train.batch_size = 8;
    bc.train.epochs = 1;
    bc.train.unlearn_epochs = 1;
    bc.train.warmup_steps = 2;
    return run_benchmark(ds, bc, nullptr, hook);
}

std::string slurp(const std::string& path) {
    std::ifstream is(path);
    REQUIRE(is);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("report emission") {
    BenchmarkResult result = tiny_benchmark(nullptr);
    REQUIRE(result.cells.size() == 2);
    REQUIRE(result.averaged.size() == 2);
    result.provenance = {{"note", "unit fixture"}};

    std::string dir = (std::filesystem::temp_directory_path() / "unlearn_emit_test").string();
    std::filesystem::remove_all(dir);
    emit_reports(result, dir);

    std::string csv = slurp(dir + "/table.csv");
    std::istringstream lines(csv);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "method,fraction,retained_f1,test_f1,forget_f1,agreement,tv,seconds");
    int rows = 0;
    for (std::string line; std::getline(lines, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 2);

    auto root = nlohmann::json::parse(slurp(dir + "/results.json"));
    CHECK(root["config"]["note"] == "unit fixture");
    REQUIRE(root["cells"].size() == 2);
    for (const auto& c : root["cells"]) {
        CHECK(std::isfinite(c["retained"]["micro_f1"].get<double>()));
        CHECK(std::isfinite(c["tv_distance"].get<double>()));
        CHECK(c["seconds"].get<double>() >= 0.0);
    }
    CHECK(!slurp(dir + "/timing.tsv").empty());

    // retrain's unlearned model is the exact reference itself
    for (const auto& c : result.cells)
        if (c.method == "retrain") {
            CHECK(c.agreement == 1.0);
            CHECK(c.tv_distance == 0.0);
        }

    // re-emission is byte-identical
    std::string before = slurp(dir + "/results.json");
    emit_reports(result, dir);
    CHECK(slurp(dir + "/results.json") == before);
    CHECK(slurp(dir + "/table.csv") == csv);
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(emit_reports(BenchmarkResult{}, dir), ParameterError);
}

TEST_CASE("reported timings exclude evaluation") {
    int calls = 0;
    detail::EvalHook sleeper = [&] {
        ++calls;
        std::this_thread::sleep_for(std::chrono::milliseconds(60));
    };
    BenchmarkResult plain = tiny_benchmark(nullptr);
    BenchmarkResult slowed = tiny_benchmark(sleeper);
    CHECK(calls >= 8);  // at least four evaluations per cell
    REQUIRE(plain.cells.size() == slowed.cells.size());
    for (std::size_t i = 0; i < plain.cells.size(); ++i) {
        double injected = 0.06 * 4;  // lower bound on sleep inside this cell's evals
        // unlearning wall-clock must not absorb the injected evaluation delay
        CHECK(std::abs(plain.cells[i].seconds - slowed.cells[i].seconds) < injected);
    }
}
