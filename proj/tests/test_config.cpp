#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "unlearn/config.hpp"

using namespace unlearn;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
    std::string path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream os(path);
    os << body;
    return path;
}

}  // namespace

TEST_CASE("defaults") {
    RunConfig rc = load_config("", {});
    CHECK(rc.train.batch_size == 32);
    CHECK(rc.train.tau == 0.1);
    CHECK(rc.train.gamma == 0.3);
    CHECK(rc.train.sisa_shards == 5);
    CHECK(rc.train.base_lr == 1e-3);
    CHECK(rc.train.unlearn_lr == 2e-5);
    CHECK(rc.train.epochs == 15);
    CHECK(rc.train.unlearn_epochs == 5);
    CHECK(rc.model.hidden_dim == 64);
    CHECK(rc.model.num_layers == 2);
    CHECK(rc.fraction == 0.1);
    CHECK(rc.method == "deepcut");
    CHECK(rc.methods.size() == 5);
    CHECK(rc.fractions == std::vector<double>{0.01, 0.10});
    CHECK(rc.seeds.size() == 5);
}

TEST_CASE("precedence: defaults < file < overrides") {
    std::string path = write_temp("unlearn_cfg_prec.cfg",
                                  "tau = 0.5\n"
                                  "gamma = 0.7\n"
                                  "# comment line\n"
                                  "batch_size = 16   # trailing comment\n"
                                  "\n");
    RunConfig file_only = load_config(path, {});
    CHECK(file_only.train.tau == 0.5);
    CHECK(file_only.train.gamma == 0.7);
    CHECK(file_only.train.batch_size == 16);
    CHECK(file_only.train.epochs == 15);  // untouched default

    RunConfig overridden = load_config(path, {{"tau", "0.7"}});
    CHECK(overridden.train.tau == 0.7);
    CHECK(overridden.train.gamma == 0.7);  // file value survives
    CHECK(overridden.resolved.at("tau") == "0.7");
    std::filesystem::remove(path);
}

TEST_CASE("unknown keys get a spelling suggestion") {
    try {
        load_config("", {{"temprature", "0.1"}});
        CHECK(false);
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("temprature") != std::string::npos);
        CHECK(msg.find("did you mean") != std::string::npos);
    }
    // an unrelated garbage key gets no suggestion
    try {
        load_config("", {{"zzzzqqqq", "1"}});
        CHECK(false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("did you mean") == std::string::npos);
    }
}

TEST_CASE("value parse errors") {
    CHECK_THROWS_AS(load_config("", {{"tau", "fast"}}), ConfigError);
    CHECK_THROWS_AS(load_config("", {{"epochs", "3x"}}), ConfigError);
    CHECK_THROWS_AS(load_config("", {{"seeds", ",,,"}}), ConfigError);
    RunConfig rc = load_config("", {{"seeds", "0,3,9"}, {"fractions", "0.05"}});
    CHECK(rc.seeds == std::vector<std::uint64_t>{0, 3, 9});
    CHECK(rc.fractions == std::vector<double>{0.05});
    RunConfig rm = load_config("", {{"methods", "deepcut,retrain"}});
    CHECK(rm.methods == std::vector<std::string>{"deepcut", "retrain"});
}

TEST_CASE("config file errors") {
    CHECK_THROWS_AS(load_config("/nonexistent/path.cfg", {}), ConfigError);
    std::string path = write_temp("unlearn_cfg_bad.cfg", "tau 0.5\n");
    try {
        load_config(path, {});
        CHECK(false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find(":1:") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("presets") {
    SyntheticSpec w16 = preset_spec("wnut16-scale");
    CHECK(w16.num_train == 2394);
    CHECK(w16.num_dev == 1000);
    CHECK(w16.num_test == 3849);
    CHECK(w16.num_classes == 10);
    CHECK(w16.label_noise == 0.3);
    SyntheticSpec w17 = preset_spec("wnut17-scale");
    CHECK(w17.num_train == 3394);
    CHECK(w17.num_classes == 6);
    SyntheticSpec ncbi = preset_spec("ncbi-scale");
    CHECK(ncbi.num_train == 5424);
    CHECK(ncbi.num_classes == 2);
    SyntheticSpec chemu = preset_spec("chemu-scale");
    CHECK(chemu.num_train == 5911);
    CHECK(chemu.num_classes == 10);
    CHECK_THROWS_AS(preset_spec("wnut16"), ConfigError);

    // preset fields can be overridden after the preset key
    RunConfig rc = load_config("", {{"preset", "wnut16-scale"}, {"num_train", "100"}});
    CHECK(rc.synthetic.num_train == 100);
    CHECK(rc.synthetic.num_test == 3849);
}

TEST_CASE("output directory honors the environment override") {
    setenv("UNLEARN_OUT_DIR", "/tmp/unlearn_env_out", 1);
    RunConfig rc = load_config("", {});
    CHECK(rc.out_dir == "/tmp/unlearn_env_out");
    RunConfig flagged = load_config("", {{"out_dir", "elsewhere"}});
    CHECK(flagged.out_dir == "elsewhere");
    unsetenv("UNLEARN_OUT_DIR");
    RunConfig plain = load_config("", {});
    CHECK(plain.out_dir == "out");
}
