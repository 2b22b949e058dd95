#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "atnlab/budget.hpp"
#include "atnlab/container.hpp"
#include "atnlab/eval.hpp"
#include "helpers.hpp"

using namespace atnlab;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

// Runs the CLI with stdout and stderr captured to a file.
Run cli(const testutil::TempDir& dir, const std::string& args) {
    const auto log = dir / "cli.log";
    const std::string cmd = std::string(ATNLAB_CLI) + " " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

std::string small_data() { return "--synth-count 80 --classes 4 --side 16"; }

nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("cli: usage errors exit with 2") {
    testutil::TempDir dir("cli_usage");
    CHECK(cli(dir, "train-classifier --arch cnn-a").code == 2);
    CHECK(cli(dir, "").code == 2);
    CHECK(cli(dir, "train-classifier --bogus 1 --out x.ckpt").code == 2);
    const Run attack = cli(dir, "attack --out " + (dir / "a.atn").string());
    CHECK(attack.code == 2);
    CHECK(attack.output.find("--eps") != std::string::npos);
}

TEST_CASE("cli: train, attack and eval round trip") {
    testutil::TempDir dir("cli_flow");
    const std::string ckpt = (dir / "m.ckpt").string();
    const std::string train = "train-classifier --arch cnn-a --data synth --seed 1 --epochs 2 " + small_data();
    REQUIRE(cli(dir, train + " --out " + ckpt).code == 0);
    CHECK(std::filesystem::exists(ckpt));
    const auto manifest = read_json(ckpt + ".manifest.json");
    CHECK(manifest["seeds"]["seed"] == 1);
    CHECK(manifest["command"] == "train-classifier");
    const std::string hash = file_hash(ckpt);

    // rerun from the manifest alone
    const std::string again = (dir / "m2.ckpt").string();
    REQUIRE(cli(dir, "train-classifier --config " + ckpt + ".manifest.json --out " + again).code == 0);
    CHECK(file_hash(again) == hash);

    const Run gamma = cli(dir, "train-atn --targets " + ckpt + " --gamma 0.5 --out " + (dir / "g.ckpt").string() +
                                   " --epochs 1 " + small_data());
    CHECK(gamma.code == 3);
    CHECK(gamma.output.find("gamma") != std::string::npos);

    const std::string missing = (dir / "nope.ckpt").string();
    const Run miss = cli(dir, "train-atn --targets " + missing + ":0.5 --out " + (dir / "g.ckpt").string() + " " +
                                  small_data());
    CHECK(miss.code == 3);
    CHECK(miss.output.find(missing) != std::string::npos);

    const std::string archive = (dir / "adv.atn").string();
    REQUIRE(cli(dir, "attack --method mifgsm --steps 10 --mu 1.0 --eps 16 --model " + ckpt + " --limit 8 --out " +
                         archive + " " + small_data())
                .code == 0);
    const Container c = load_container(archive);
    const Tensor& clean = c.tensor("clean");
    const Tensor& adv = c.tensor("adversarial");
    CHECK(within_budget(clean.data(), adv.data(), 16.0f));

    const std::string csv = (dir / "r.csv").string();
    const std::string eval_args = "eval --models " + ckpt + " --archives " + archive + " --defense noise:6 ";
    REQUIRE(cli(dir, eval_args + "--out " + csv + " " + small_data()).code == 0);
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == kCsvHeader);
    std::string row;
    std::getline(in, row);
    CHECK(row.find(",noise:6,16,") != std::string::npos);

    const std::string csv2 = (dir / "r2.csv").string();
    REQUIRE(cli(dir, "eval --config " + csv + ".manifest.json --out " + csv2).code == 0);
    CHECK(file_hash(csv2) == file_hash(csv));
}
