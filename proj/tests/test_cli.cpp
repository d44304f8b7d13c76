#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ddrb/cli.hpp"
#include "ddrb/harness.hpp"

using namespace ddrb;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kDataSection =
    "\"data\": {\"blobs\": {\"class_count\": 3, \"per_class\": 16, \"resolution\": 8, "
    "\"channels\": 1, \"sigma\": 0.2, \"seed\": 4}}";

std::string small_config() {
    return std::string("{\"distill\": {\"iterations\": 4, \"batch_real\": 8}, "
                       "\"model\": {\"width\": 16}, ") +
           kDataSection + "}";
}

std::string train_config() {
    return std::string("{\"model\": {\"width\": 16}, ") + kDataSection + "}";
}

}  // namespace

TEST_CASE("the distill-train-eval-robust-report pipeline runs end to end") {
    auto dir = fresh_dir("ddrb-cli-pipe");
    write_text(dir / "cfg.json", small_config());
    write_text(dir / "tcfg.json", train_config());

    CHECK(cli::run({"distill", "--method", "dc", "--dataset", "blobs", "--ipc", "1",
                    "--iterations", "4", "--seed", "3", "--config", (dir / "cfg.json").string(),
                    "--out", (dir / "run").string()}) == 0);
    CHECK(fs::exists(dir / "run" / "distilled.ddrb"));
    REQUIRE(fs::exists(dir / "run" / "run_config.json"));

    const json echo = json::parse(read_text(dir / "run" / "run_config.json"));
    CHECK(echo["command"] == "distill");
    CHECK(echo["flags"]["method"] == "dc");
    CHECK(echo["flags"]["ipc"] == 1);
    CHECK(echo["flags"]["seed"] == 3);
    CHECK(echo["distill"]["iterations"] == 4);  // config file value visible in the echo
    CHECK(echo["data"]["blobs"]["class_count"] == 3);

    CHECK(cli::run({"train", "--distilled-path", (dir / "run" / "distilled.ddrb").string(),
                    "--model", "ConvNet", "--train-epoch", "15", "--train-batch", "8",
                    "--model-num", "2", "--seed", "1", "--config", (dir / "tcfg.json").string(),
                    "--save-path", (dir / "models").string()}) == 0);
    CHECK(fs::exists(dir / "models" / "model-0.ddrw"));
    CHECK(fs::exists(dir / "models" / "model-1.ddrw"));
    const json techo = json::parse(read_text(dir / "models" / "run_config.json"));
    CHECK(techo["flags"]["model_num"] == 2);
    CHECK(techo["results"]["final_val_acc"].size() == 2);

    write_text(dir / "weights.yaml", "# two checkpoints\n- models/model-0.ddrw\n- models/model-1.ddrw\n");
    write_text(dir / "params.yaml", "fgsm: [0.00784, 0.00784, 10]\npgd: [0.03137, 0.00784, 10]\n");

    CHECK(cli::run({"eval", "--weights", (dir / "weights.yaml").string(), "--dataset", "blobs",
                    "--config", (dir / "tcfg.json").string()}) == 0);

    CHECK(cli::run({"robust", "--attacker", "FGSM", "--weights", (dir / "weights.yaml").string(),
                    "--params", (dir / "params.yaml").string(), "--repeat", "2", "--dataset",
                    "blobs", "--config", (dir / "tcfg.json").string(), "--log-path",
                    (dir / "robust.log").string(), "--seed", "9"}) == 0);

    const std::string log = read_text(dir / "robust.log");
    CHECK(log.find("Using FGSM for perturbation.") != std::string::npos);
    CHECK(log.find("Repeat each experiment for 2 times.") != std::string::npos);
    CHECK(log.find("Test parameters: [0.00784, 0.00784, 10]") != std::string::npos);
    CHECK(log.find("Testing weights: model-0.ddrw") != std::string::npos);
    CHECK(log.find("Testing weights: model-1.ddrw") != std::string::npos);
    CHECK(log.find("Average robust accuracy: ") != std::string::npos);

    fs::remove_all(dir);
}

TEST_CASE("robust flags override the params file") {
    auto dir = fresh_dir("ddrb-cli-robust");
    write_text(dir / "tcfg.json", train_config());
    CHECK(cli::run({"train", "--dataset", "blobs", "--train-epoch", "4", "--train-batch", "16",
                    "--model-num", "1", "--config", (dir / "tcfg.json").string(), "--save-path",
                    (dir / "m").string()}) == 0);
    write_text(dir / "params.yaml", "pgd: [0.03137, 0.00784, 10]\n");

    CHECK(cli::run({"robust", "--attacker", "pgd", "--weights", (dir / "m" / "model-0.ddrw").string(),
                    "--params", (dir / "params.yaml").string(), "--eps", "0.0625", "--iters", "2",
                    "--repeat", "1", "--dataset", "blobs", "--config", (dir / "tcfg.json").string(),
                    "--log-path", (dir / "r.log").string(), "--output", (dir / "r").string()}) == 0);
    const std::string log = read_text(dir / "r.log");
    CHECK(log.find("Test parameters: [0.0625, 0.00784, 2]") != std::string::npos);

    // the echoed config records the merged values
    const json echo = json::parse(read_text(dir / "r" / "run_config.json"));
    CHECK(echo["flags"]["eps"] == 0.0625);
    CHECK(echo["flags"]["iters"] == 2);
    CHECK(echo["flags"]["attacker"] == "pgd");

    // --output also emits machine-readable rows with a consistent drop rate
    auto rows = harness::read_reports(dir / "r" / "robust.jsonl", harness::ReportFormat::jsonl);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].epsilon == 0.0625);
    REQUIRE(rows[0].robust.size() == 1);
    CHECK(rows[0].robust[0].first == "pgd");
    CHECK(rows[0].drop[0].second ==
          doctest::Approx(harness::drop_rate(rows[0].clean_acc, rows[0].robust[0].second))
              .epsilon(1e-12));
    fs::remove_all(dir);
}

TEST_CASE("weights maps name entries to their paths") {
    auto dir = fresh_dir("ddrb-cli-weights");
    write_text(dir / "tcfg.json", train_config());
    CHECK(cli::run({"train", "--dataset", "blobs", "--train-epoch", "3", "--train-batch", "16",
                    "--model-num", "1", "--config", (dir / "tcfg.json").string(), "--save-path",
                    (dir / "m").string()}) == 0);
    write_text(dir / "weights.yaml", "blobs_whole_run: m/model-0.ddrw\n");
    CHECK(cli::run({"robust", "--attacker", "fgsm", "--weights", (dir / "weights.yaml").string(),
                    "--iters", "1", "--repeat", "1", "--dataset", "blobs", "--config",
                    (dir / "tcfg.json").string(), "--log-path", (dir / "r.log").string()}) == 0);
    CHECK(read_text(dir / "r.log").find("Testing weights: blobs_whole_run") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("ablate writes a jsonl report that the report command converts") {
    auto dir = fresh_dir("ddrb-cli-ablate");
    std::string exp = std::string("{\"datasets\": [\"blobs\"], \"methods\": [\"dc\"], "
                                  "\"ipc\": [1], \"attacks\": [\"fgsm\"], "
                                  "\"epsilons\": [0.03137254901960784], \"attack_iterations\": 1, "
                                  "\"seed\": 2, "
                                  "\"train\": {\"epochs\": 4, \"batch_size\": 16, \"repeats\": 1, "
                                  "\"lr\": 0.05}, "
                                  "\"distill\": {\"iterations\": 2, \"batch_real\": 8}, "
                                  "\"model\": {\"width\": 16}, ") +
                      kDataSection + "}";
    write_text(dir / "exp.json", exp);

    CHECK(cli::run({"ablate", "--kind", "factor", "--grid", "1,2", "--base-config",
                    (dir / "exp.json").string(), "--output", (dir / "ab").string()}) == 0);
    REQUIRE(fs::exists(dir / "ab" / "ablation.jsonl"));

    auto rows = harness::read_reports(dir / "ab" / "ablation.jsonl", harness::ReportFormat::jsonl);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].ablation == "factor=1");
    CHECK(rows[1].ablation == "factor=2");
    CHECK(rows[0].group_hash == rows[1].group_hash);
    CHECK(rows[0].error.empty());
    CHECK(rows[1].error.empty());

    CHECK(cli::run({"report", "--input", (dir / "ab" / "ablation.jsonl").string(), "--format",
                    "csv", "--output", (dir / "ab" / "r.csv").string()}) == 0);
    CHECK(cli::run({"report", "--input", (dir / "ab" / "r.csv").string(), "--format", "markdown",
                    "--output", (dir / "ab" / "r.md").string()}) == 0);
    const std::string md = read_text(dir / "ab" / "r.md");
    CHECK(md.find("## blobs") != std::string::npos);
    CHECK(md.find("| dc |") != std::string::npos);

    auto back = harness::read_reports(dir / "ab" / "r.csv", harness::ReportFormat::csv);
    REQUIRE(back.size() == 2);
    CHECK(back[0].clean_acc == rows[0].clean_acc);
    CHECK(back[1].robust == rows[1].robust);
    fs::remove_all(dir);
}

TEST_CASE("validation problems exit with code 1") {
    auto dir = fresh_dir("ddrb-cli-exit1");
    write_text(dir / "tcfg.json", train_config());
    CHECK(cli::run({"train", "--dataset", "blobs", "--epochs", "0", "--save-path",
                    (dir / "x").string()}) == 1);
    CHECK(cli::run({"train", "--dataset", "blobs", "--distilled-path", "d.ddrb", "--save-path",
                    (dir / "x").string()}) == 1);  // both sources
    CHECK(cli::run({"train", "--save-path", (dir / "x").string()}) == 1);  // no source
    CHECK(cli::run({"train", "--dataset", "blobs", "--optimizer", "adam", "--save-path",
                    (dir / "x").string()}) == 1);
    CHECK(cli::run({"distill", "--bogus", "1", "--out", (dir / "x").string()}) == 1);
    CHECK(cli::run({"distill", "--method", "gan", "--out", (dir / "x").string()}) == 1);
    CHECK(cli::run({"distill"}) == 1);  // --out is required
    CHECK(cli::run({"robust", "--attacker", "warp", "--weights", "w.yaml"}) == 1);
    CHECK(cli::run({"ablate", "--kind", "width", "--grid", "1", "--base-config",
                    (dir / "tcfg.json").string(), "--output", (dir / "x").string()}) == 1);
    CHECK(cli::run({"report", "--input", "r.txt", "--format", "csv", "--output", "o.csv"}) == 1);
    CHECK(cli::run({"frobnicate"}) == 1);
    CHECK(cli::run({}) == 1);
    fs::remove_all(dir);
}

TEST_CASE("runtime problems exit with code 2") {
    auto dir = fresh_dir("ddrb-cli-exit2");
    CHECK(cli::run({"eval", "--weights", (dir / "missing.ddrw").string()}) == 2);
    CHECK(cli::run({"report", "--input", (dir / "missing.jsonl").string(), "--format", "csv",
                    "--output", (dir / "o.csv").string()}) == 2);

    write_text(dir / "broken.json", "{\"distill\": ");
    CHECK(cli::run({"distill", "--config", (dir / "broken.json").string(), "--out",
                    (dir / "x").string()}) == 2);

    write_text(dir / "empty.yaml", "# nothing\n");
    CHECK(cli::run({"robust", "--weights", (dir / "empty.yaml").string()}) == 2);

    write_text(dir / "params.yaml", "fgsm: not-a-list\n");
    write_text(dir / "w.yaml", "- also-missing.ddrw\n");
    CHECK(cli::run({"robust", "--weights", (dir / "w.yaml").string(), "--params",
                    (dir / "params.yaml").string()}) == 2);
    fs::remove_all(dir);
}

TEST_CASE("help requests succeed") {
    CHECK(cli::run({"--help"}) == 0);
    CHECK(cli::run({"distill", "--help"}) == 0);
    CHECK(cli::run({"robust", "--help"}) == 0);
}

TEST_CASE("config keys are schema checked") {
    auto dir = fresh_dir("ddrb-cli-schema");
    write_text(dir / "bad.json", "{\"distil\": {\"ipc\": 1}}");  // typo'd section
    CHECK(cli::run({"distill", "--config", (dir / "bad.json").string(), "--out",
                    (dir / "x").string()}) == 1);
    write_text(dir / "bad2.json", "{\"distill\": {\"ipcs\": 1}}");
    CHECK(cli::run({"distill", "--config", (dir / "bad2.json").string(), "--out",
                    (dir / "x").string()}) == 1);
    write_text(dir / "bad3.json", "{\"distill\": {\"ipc\": \"one\"}}");
    CHECK(cli::run({"distill", "--config", (dir / "bad3.json").string(), "--out",
                    (dir / "x").string()}) == 1);
    fs::remove_all(dir);
}
