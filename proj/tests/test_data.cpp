#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "unlearn/data.hpp"
#include "unlearn/engines.hpp"

using namespace unlearn;

TEST_CASE("conll parsing") {
    LabelVocab labels;
    std::istringstream in("EU B-ORG\nrejects O\n\n");
    auto sents = parse_conll_stream(in, labels);
    REQUIRE(sents.size() == 1);
    CHECK(sents[0].tokens == std::vector<std::string>{"EU", "rejects"});
    CHECK(labels.names[static_cast<std::size_t>(sents[0].labels[0])] == "B-ORG");
    CHECK(labels.names[static_cast<std::size_t>(sents[0].labels[1])] == "O");

    // consecutive blank lines collapse; no empty sentence emitted
    LabelVocab l2;
    std::istringstream in2("a O\n\n\n\nb O\n");
    auto s2 = parse_conll_stream(in2, l2);
    CHECK(s2.size() == 2);
    CHECK(s2[0].id == 0);
    CHECK(s2[1].id == 1);

    // one-field line names its line number
    LabelVocab l3;
    std::istringstream in3("token\n");
    try {
        parse_conll_stream(in3, l3);
        CHECK(false);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }

    // three fields is also malformed
    LabelVocab l4;
    std::istringstream in4("a O extra\n");
    CHECK_THROWS_AS(parse_conll_stream(in4, l4), DataError);

    // empty file: empty split, no error
    LabelVocab l5;
    std::istringstream in5("");
    CHECK(parse_conll_stream(in5, l5).empty());
}

TEST_CASE("conll round-trip") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        TokenDataset ds = testutil::tiny_dataset(16, seed);
        std::ostringstream os;
        write_conll(ds.train, ds.labels, os);
        LabelVocab labels2;
        std::istringstream is(os.str());
        auto again = parse_conll_stream(is, labels2);
        REQUIRE(again.size() == ds.train.size());
        for (std::size_t i = 0; i < again.size(); ++i) {
            CHECK(again[i].tokens == ds.train[i].tokens);
            for (std::size_t j = 0; j < again[i].labels.size(); ++j)
                CHECK(labels2.names[static_cast<std::size_t>(again[i].labels[j])] ==
                      ds.labels.names[static_cast<std::size_t>(ds.train[i].labels[j])]);
        }
    }
}

TEST_CASE("synthetic generation") {
    SyntheticSpec spec;
    TokenDataset a = generate_synthetic(spec, 7);
    TokenDataset b = generate_synthetic(spec, 7);
    CHECK(a.train.size() == static_cast<std::size_t>(spec.num_train));
    CHECK(a.dev.size() == static_cast<std::size_t>(spec.num_dev));
    CHECK(a.test.size() == static_cast<std::size_t>(spec.num_test));
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].tokens == b.train[i].tokens);
        CHECK(a.train[i].labels == b.train[i].labels);
    }
    TokenDataset c = generate_synthetic(spec, 8);
    bool differ = false;
    for (std::size_t i = 0; i < std::min(a.train.size(), c.train.size()); ++i)
        differ = differ || a.train[i].tokens != c.train[i].tokens;
    CHECK(differ);

    for (const auto& s : a.train) CHECK(s.length() >= 3);

    SyntheticSpec two = spec;
    two.num_classes = 2;
    TokenDataset d = generate_synthetic(two, 0);
    CHECK(d.labels.size() == 2);
    for (const auto& s : d.train)
        for (int l : s.labels) CHECK((l == 0 || l == 1));

    SyntheticSpec bad = spec;
    bad.mean_len = 2.0;
    CHECK_THROWS_AS(generate_synthetic(bad, 0), ParameterError);
    SyntheticSpec bad2 = spec;
    bad2.num_classes = 1;
    CHECK_THROWS_AS(generate_synthetic(bad2, 0), ParameterError);
}

TEST_CASE("vocabulary rules") {
    TokenDataset ds;
    ds.labels.add("O");
    auto mk = [&](std::vector<std::string> toks) {
        Sentence s;
        s.tokens = toks;
        s.labels.assign(toks.size(), 0);
        return s;
    };
    ds.train = {mk({"alpha", "beta", "alpha"})};
    ds.train[0].id = 0;
    ds.dev = {mk({"alpha", "gamma"})};
    ds.test = {mk({"delta"})};

    TokenDataset once = ds;
    build_vocab_and_encode(once);
    CHECK(once.vocab.lookup("alpha") >= 2);             // id 0/1 reserved
    CHECK(once.dev[0].token_ids[1] == TokenVocab::kUnk);  // test-only token -> unk
    CHECK(once.test[0].token_ids[0] == TokenVocab::kUnk);

    TokenDataset thresh = ds;
    build_vocab_and_encode(thresh, 2);
    CHECK(thresh.train[0].token_ids[0] != TokenVocab::kUnk);  // alpha appears twice
    CHECK(thresh.train[0].token_ids[1] == TokenVocab::kUnk);  // beta appears once

    TokenDataset empty;
    empty.labels.add("O");
    CHECK_THROWS_AS(build_vocab_and_encode(empty), DataError);
}

TEST_CASE("forget selection") {
    SyntheticSpec spec;
    spec.num_train = 2394;
    spec.num_dev = 10;
    spec.num_test = 10;
    TokenDataset ds = generate_synthetic(spec, 0);

    UnlearnRequest r1 = select_forget(ds, 0.01, 0);
    CHECK(r1.forget_ids.size() == 23);  // floor(0.01 * 2394)
    UnlearnRequest r10 = select_forget(ds, 0.10, 0);
    CHECK(r10.forget_ids.size() == 239);

    UnlearnRequest again = select_forget(ds, 0.10, 0);
    CHECK(again.forget_ids == r10.forget_ids);
    UnlearnRequest other = select_forget(ds, 0.10, 1);
    CHECK(other.forget_ids != r10.forget_ids);

    // partition law
    auto retained = retained_sentences(ds, r10);
    auto forgot = forget_sentences(ds, r10);
    CHECK(retained.size() + forgot.size() == ds.train.size());
    for (const auto& s : forgot) CHECK(r10.is_forgotten(s.id));
    for (const auto& s : retained) CHECK_FALSE(r10.is_forgotten(s.id));

    CHECK_THROWS_AS(select_forget(ds, 0.0, 0), ParameterError);
    CHECK_THROWS_AS(select_forget(ds, 1.0, 0), ParameterError);
    SyntheticSpec tiny;
    tiny.num_train = 10;
    tiny.num_dev = 4;
    tiny.num_test = 4;
    TokenDataset small = generate_synthetic(tiny, 0);
    CHECK_THROWS_AS(select_forget(small, 0.01, 0), ParameterError);  // floor == 0
}

TEST_CASE("batching") {
    SyntheticSpec spec;
    spec.num_train = 70;
    spec.num_dev = 4;
    spec.num_test = 4;
    TokenDataset ds = generate_synthetic(spec, 1);
    build_vocab_and_encode(ds);

    auto batches = make_batches(ds.train, 32, 5);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size == 32);
    CHECK(batches[1].size == 32);
    CHECK(batches[2].size == 6);

    for (const auto& b : batches)
        for (std::int64_t r = 0; r < b.size; ++r)
            for (std::int64_t j = 0; j < b.max_len; ++j) {
                bool real = b.mask[r * b.max_len + j] > 0;
                if (!real) CHECK(b.token_ids[r * b.max_len + j] == TokenVocab::kPad);
            }

    auto batches2 = make_batches(ds.train, 32, 5);
    CHECK(batches[0].sentence_ids == batches2[0].sentence_ids);
    auto batches3 = make_batches(ds.train, 32, 6);
    CHECK(batches[0].sentence_ids != batches3[0].sentence_ids);

    CHECK_THROWS_AS(make_batches(ds.train, 0, 5), ParameterError);
}

TEST_CASE("padding never contributes") {
    // flipping the labels stored at padded positions changes neither the
    // training loss nor any metric
    TokenDataset ds = testutil::tiny_dataset(8, 2);
    ModelConfig mc = testutil::tiny_model_config(ds);
    Rng init(0);
    ModelCheckpoint ckpt = init_parameters(mc, init);

    auto batches = make_batches(ds.train, 8, 0);
    Batch b = batches[0];
    Rng r1(4), r2(4);
    double loss1 = detail::batch_cross_entropy(mc, ckpt.params, b, r1, nullptr, false).item();
    Batch flipped = b;
    for (std::int64_t r = 0; r < b.size; ++r)
        for (std::int64_t j = 0; j < b.max_len; ++j)
            if (flipped.mask[r * b.max_len + j] == 0.0) flipped.labels[r * b.max_len + j] = 1;
    double loss2 = detail::batch_cross_entropy(mc, ckpt.params, flipped, r2, nullptr, false).item();
    CHECK(loss1 == loss2);
}

TEST_CASE("truncation") {
    TokenDataset ds = testutil::tiny_dataset(8, 3);
    truncate_sentences(ds, 4);
    for (const auto& s : ds.train) {
        CHECK(s.length() <= 4);
        CHECK(s.token_ids.size() == s.length());
        CHECK(s.labels.size() == s.length());
    }
    CHECK_THROWS_AS(truncate_sentences(ds, 0), ParameterError);
}

TEST_CASE("synthetic learnability gate") {
    // clean small fixture: the model must be able to learn the task
    SyntheticSpec spec;
    spec.num_train = 60;
    spec.num_dev = 16;
    spec.num_test = 16;
    spec.num_classes = 3;
    spec.vocab_size = 300;
    spec.mean_len = 8.0;
    spec.entity_rate = 0.4;
    spec.triggers_per_class = 10;
    TokenDataset ds = generate_synthetic(spec, 0);
    build_vocab_and_encode(ds);

    ModelConfig mc;
    mc.vocab_size = ds.vocab.size();
    mc.max_len = 32;
    mc.hidden_dim = 32;
    mc.num_layers = 2;
    mc.num_heads = 4;
    mc.dropout_rate = 0.1;
    mc.num_classes = ds.labels.size();

    TrainConfig tc;
    tc.batch_size = 16;
    tc.base_lr = 1e-3;
    tc.warmup_steps = 20;
    tc.epochs = 20;
    tc.seed = 0;

    TrainResult r = train_model(ds, mc, tc);
    SplitMetrics train_m = evaluate_split(r.checkpoint, ds.train, ds.labels.outside());
    CHECK(train_m.f1 >= 0.95);
}
