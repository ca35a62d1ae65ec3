#include "maxsec/target.hpp"
#include "maxsec/errors.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace maxsec;
namespace fs = std::filesystem;

namespace {

struct Run {
    int rc;
    std::string out;
};

fs::path scratch()
{
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("maxsec_cli_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Run cli(const std::string& args)
{
    const fs::path out = scratch() / "stdout.txt";
    const std::string cmd = std::string(MAXSEC_CLI_PATH) + " " + args + " >" + out.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    std::ifstream in(out, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("target specs")
{
    const auto s = TargetSpec::parse("sim:10m08?fuses=vp,jtagsec&seed=4&preload=1");
    CHECK(s.kind == TargetSpec::Kind::Sim);
    CHECK(s.profile == "10m08");
    CHECK(s.fuses.bits() == 5);
    CHECK(s.seed == 4);
    CHECK(s.preload);
    CHECK(TargetSpec::parse(s.str()).str() == s.str());
    const auto r = TargetSpec::parse("remote:127.0.0.1:9000");
    CHECK(r.kind == TargetSpec::Kind::Remote);
    CHECK(r.port == 9000);
    CHECK_THROWS_AS(TargetSpec::parse("sim:10m08?fuses=bogus"), FormatError);
    CHECK_THROWS_AS(TargetSpec::parse("usb:1"), FormatError);
    CHECK_THROWS_AS(parse_key("0011"), FormatError);
    CHECK(key_hex(parse_key("00112233445566778899aabbccddeeff")) == "00112233445566778899AABBCCDDEEFF");
    const auto keyed = TargetSpec::parse("sim:10m08?key=00112233445566778899AABBCCDDEEFF");
    CHECK(make_device(keyed).stored_fuses().aes_key == parse_key("00112233445566778899AABBCCDDEEFF"));
}

TEST_CASE("unknown subcommand is a usage error")
{
    CHECK(cli("frobnicate").rc == 2);
    CHECK(cli("").rc == 2);
    CHECK(cli("scan ir --target usb:1").rc == 2);
    CHECK(cli("scan ir --target sim:nosuch").rc == 3);
}

TEST_CASE("IR survey through the command line")
{
    const fs::path out = scratch() / "survey.json";
    const auto r = cli("scan ir --target sim:10m08 --known " + std::string(MAXSEC_DATA_DIR) + "/known_cmds.txt --out "
                       + out.string());
    CHECK(r.rc == 0);
    const auto j = nlohmann::json::parse(slurp(out));
    const std::vector<std::string> expect = {"0x008", "0x015", "0x090", "0x091", "0x1EE", "0x206",
                                             "0x207", "0x2B0", "0x2D0", "0x303", "0x3F5"};
    CHECK(j["undocumented"].get<std::vector<std::string>>() == expect);
}

TEST_CASE("pof detect on a synthesized secured-JTAG image")
{
    const fs::path img = scratch() / "js.pof";
    REQUIRE(cli("pof synth --fuses jtagsec --out " + img.string()).rc == 0);
    const auto r = cli("pof detect " + img.string());
    CHECK(r.rc == 0);
    CHECK(r.out.find("SecuredJtag @ 0x001C") != std::string::npos);
}

TEST_CASE("machine output is byte-identical for identical invocations")
{
    const std::string args = "campaign run --trials 2 --seed 17 --format json";
    const auto a = cli(args);
    const auto b = cli(args);
    CHECK(a.rc == 0);
    CHECK(a.out == b.out);
    CHECK(cli(args + " --jobs 1").out == a.out);
    CHECK(cli("campaign run --trials 2 --format json").rc == 2);

    const fs::path t1 = scratch() / "t1.mxpt", t2 = scratch() / "t2.mxpt";
    REQUIRE(cli("trace synth --target sim:10m04 --seed 3 --out " + t1.string()).rc == 0);
    REQUIRE(cli("trace synth --target sim:10m04 --seed 3 --out " + t2.string()).rc == 0);
    CHECK(slurp(t1) == slurp(t2));
    CHECK(cli("trace diff " + t1.string() + " " + t2.string()).rc == 0);
    CHECK(cli("trace segment " + t1.string() + " --format json").rc == 0);
}

TEST_CASE("text mode echoes the drawn seed")
{
    const auto r = cli("campaign run --trials 1");
    CHECK(r.rc == 0);
    CHECK(r.out.starts_with("# seed "));
}

TEST_CASE("format follows the output extension")
{
    const fs::path out = scratch() / "mem.json";
    REQUIRE(cli("scan memory --target sim:10m08 --out " + out.string()).rc == 0);
    const auto j = nlohmann::json::parse(slurp(out));
    CHECK(j["regions"].size() == 4);
}

TEST_CASE("findings exit with 1")
{
    const fs::path a = scratch() / "a.pof", b = scratch() / "b.pof";
    REQUIRE(cli("pof synth --out " + a.string()).rc == 0);
    REQUIRE(cli("pof synth --fuses vp --out " + b.string()).rc == 0);
    CHECK(cli("pof diff " + a.string() + " " + a.string()).rc == 0);
    CHECK(cli("pof diff " + a.string() + " " + b.string()).rc == 1);
    CHECK(cli("pof detect " + (scratch() / "missing.pof").string()).rc == 3);
}

TEST_CASE("scan over a served simulator equals the direct scan")
{
    FILE* server = ::popen((std::string(MAXSEC_CLI_PATH) + " serve --target sim:10m08?fuses=vp --max-connections 1").c_str(),
                           "r");
    REQUIRE(server);
    char line[128] = {};
    REQUIRE(std::fgets(line, sizeof line, server));
    const std::string l = line;
    const auto colon = l.rfind(':');
    REQUIRE(colon != std::string::npos);
    const std::string port = l.substr(colon + 1, l.find_last_not_of("\r\n") - colon);
    const auto remote = cli("scan memory --target remote:127.0.0.1:" + port + " --format json");
    ::pclose(server);
    const auto direct = cli("scan memory --target 'sim:10m08?fuses=vp' --format json");
    CHECK(remote.rc == 0);
    CHECK(remote.out == direct.out);
}
