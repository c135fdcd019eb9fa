// Exercises the installed binary end to end: archive lifecycle, exit codes,
// metric emission. The binary path arrives via the RESQ_CLI environment
// variable set by ctest.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

namespace {

std::string cli() {
    const char* p = std::getenv("RESQ_CLI");
    REQUIRE_MESSAGE(p != nullptr, "RESQ_CLI must point at the resq binary");
    return p;
}

int run(const std::string& args) {
    const std::string cmd = cli() + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string capture(const std::string& args) {
    const std::string cmd = cli() + " " + args + " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::string out;
    char buf[512];
    while (fgets(buf, sizeof buf, p)) out += buf;
    pclose(p);
    return out;
}

const std::string dir = "/tmp/resq_cli_test";
const std::string kTinyModel = " --dh 32 --heads 2 --kv-heads 1 --dffn 64 --layers 1 --vocab 64 ";

// model + stream + calibration shared by every case, built on first use
bool setup_ok() {
    static const bool ok = [] {
        if (std::system(("rm -rf " + dir + " && mkdir -p " + dir).c_str()) != 0) return false;
        if (run("init-model " + dir + "/toy.resq --seed 5" + kTinyModel) != 0) return false;
        if (run("gen-stream " + dir + "/toy.resq -o " + dir + "/eval.txt --seed 2 --tokens 512") !=
            0)
            return false;
        return run("calibrate " + dir + "/toy.resq -o " + dir +
                   "/calib.resq --samples 4 --seqlen 64 --seed 3") == 0;
    }();
    return ok;
}

}  // namespace

TEST_CASE("quantize + eval lifecycle") {
    REQUIRE(setup_ok());
    CHECK(run("quantize " + dir + "/calib.resq -o " + dir + "/q.resq --wbits 4 --abits 4 "
              "--kvbits 4 --basis resq") == 0);
    std::string out = capture("eval " + dir + "/q.resq --stream " + dir + "/eval.txt --metric ppl");
    CHECK(out.find("\"metric\": \"ppl\"") != std::string::npos);
    CHECK(out.find("\"value\"") != std::string::npos);

    // 16/16/16 tracks the float baseline
    CHECK(run("quantize " + dir + "/calib.resq -o " + dir + "/q16.resq --wbits 16 --abits 16 "
              "--kvbits 16 --basis resq") == 0);
    std::string fp = capture("eval " + dir + "/toy.resq --stream " + dir + "/eval.txt");
    std::string q16 = capture("eval " + dir + "/q16.resq --stream " + dir + "/eval.txt");
    auto value_of = [](const std::string& s) {
        auto at = s.find("\"value\": ");
        return std::stod(s.substr(at + 9));
    };
    CHECK(value_of(q16) == doctest::Approx(value_of(fp)).epsilon(1e-4));
}

TEST_CASE("rtn baseline works without calibration") {
    REQUIRE(setup_ok());
    CHECK(run("quantize " + dir + "/toy.resq -o " + dir + "/rtn.resq --basis identity "
              "--no-gptq") == 0);
    std::string out = capture("eval " + dir + "/rtn.resq --stream " + dir + "/eval.txt");
    CHECK(out.find("\"value\"") != std::string::npos);
}

TEST_CASE("exit codes") {
    REQUIRE(setup_ok());
    // 4: resq basis without calibration
    CHECK(run("quantize " + dir + "/toy.resq -o " + dir + "/x.resq --basis resq") == 4);
    // 2: unknown metric
    CHECK(run("eval " + dir + "/calib.resq --stream " + dir + "/eval.txt --metric bogus") == 2);
    // 2: unreadable archive
    std::ofstream(dir + "/junk.resq") << "junk";
    CHECK(run("eval " + dir + "/junk.resq --stream " + dir + "/eval.txt") == 2);
    // 2: usage error
    CHECK(run("quantize") == 2);
    // 5: incomparable model configs
    CHECK(run("init-model " + dir + "/other.resq --seed 5 --dh 16 --heads 2 --kv-heads 1 "
              "--dffn 32 --layers 1 --vocab 64") == 0);
    CHECK(run("compare " + dir + "/toy.resq " + dir + "/other.resq --stream " + dir +
              "/eval.txt") == 5);
}

TEST_CASE("compare emits aligned csv with zero self-delta") {
    REQUIRE(setup_ok());
    std::string csv = capture("compare " + dir + "/toy.resq " + dir + "/toy.resq --stream " + dir +
                              "/eval.txt --emit csv");
    CHECK(csv.find("archive,basis,wbits") == 0);
    // same archive twice: the delta column of the second row is zero
    auto last = csv.find_last_of(',');
    CHECK(std::stod(csv.substr(last + 1)) == doctest::Approx(0.0));
}

TEST_CASE("thread cap never changes results") {
    REQUIRE(setup_ok());
    auto run_env = [](const std::string& env, const std::string& args) {
        const std::string cmd = env + " " + cli() + " " + args + " >/dev/null 2>&1";
        return WEXITSTATUS(std::system(cmd.c_str()));
    };
    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    const std::string args = "calibrate " + dir + "/toy.resq --samples 3 --seqlen 48 --seed 8 -o ";
    CHECK(run_env("RESQ_THREADS=1", args + dir + "/t1.resq") == 0);
    CHECK(run_env("RESQ_THREADS=4", args + dir + "/t4.resq") == 0);
    const std::string b1 = slurp(dir + "/t1.resq");
    CHECK_FALSE(b1.empty());
    CHECK(b1 == slurp(dir + "/t4.resq"));
}

TEST_CASE("mixed key-path split is accepted") {
    REQUIRE(setup_ok());
    CHECK(run("quantize " + dir + "/calib.resq -o " + dir + "/mixeduc.resq --wbits 4 --abits 4 "
              "--kvbits 4 --basis resq --mixed-uc") == 0);
    std::string out = capture("eval " + dir + "/mixeduc.resq --stream " + dir + "/eval.txt");
    CHECK(out.find("\"value\"") != std::string::npos);
    CHECK(out.find("\"mixed_uc\": true") != std::string::npos);
}

TEST_CASE("snr report emits the four-basis table") {
    std::string csv = capture("report --kind snr --dim 32 --rank 4 --seeds 2 --rows 128");
    CHECK(csv.find("basis,snr_db") == 0);
    CHECK(csv.find("resq,") != std::string::npos);
    CHECK(csv.find("rotation,") != std::string::npos);
    CHECK(csv.find("identity,") != std::string::npos);
    CHECK(csv.find("outlier,") != std::string::npos);
}
