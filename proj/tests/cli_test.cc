#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "pairforge/cli.h"
#include "test_support.h"

namespace pairforge {
namespace {

struct CallResult {
  int code;
  std::string out;
  std::string err;
};

CallResult Call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = Dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

double AccuracyOf(const std::string& out) {
  const auto pos = out.find("accuracy=");
  EXPECT_NE(pos, std::string::npos) << out;
  return pos == std::string::npos ? -1 : std::stod(out.substr(pos + 9));
}

TEST(CliTest, ExitCodes) {
  EXPECT_EQ(Call({}).code, kExitUsage);
  const auto help = Call({"--help"});
  EXPECT_EQ(help.code, kExitOk);
  EXPECT_NE(help.out.find("annotate"), std::string::npos);
  EXPECT_EQ(Call({"train", "--help"}).code, kExitOk);
  EXPECT_EQ(Call({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(Call({"annotate", "--out", "x"}).code, kExitUsage);
  const auto missing = Call({"annotate", "--recon", "/nonexistent/recon.txt", "--out", "/tmp/x"});
  EXPECT_EQ(missing.code, kExitDomainError);
  EXPECT_EQ(missing.err.rfind("error: ", 0), 0u);
  EXPECT_EQ(missing.err.find('\n'), missing.err.size() - 1);
}

TEST(CliTest, ParseErrorReportsLocation) {
  testing::TempDir dir("cli_parse");
  std::ofstream(dir / "recon.txt") << "SCENE 0 a\nIMAGE 1 0 x 10 ten\n";
  const auto r = Call({"annotate", "--recon", dir / "recon.txt", "--out", dir / "pos.txt"});
  EXPECT_EQ(r.code, kExitDomainError);
  EXPECT_NE(r.err.find("2"), std::string::npos) << r.err;
}

TEST(CliTest, EvaluateOnDisjointPairsPrintsZero) {
  testing::TempDir dir("cli_eval");
  std::ofstream(dir / "pairs.txt") << "a b 1 0.5\n";
  std::ofstream(dir / "matches.txt") << "";
  const auto r = Call({"evaluate", "--pairs", dir / "pairs.txt", "--matches", dir / "matches.txt"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("accuracy=0.0"), std::string::npos) << r.out;
}

TEST(CliTest, DumpConfigRoundTrips) {
  testing::TempDir dir("cli_cfg");
  const auto dump = Call({"--dump-config", "mine", "--poslists", "p.txt", "--t", "77", "--out", "b.txt"});
  ASSERT_EQ(dump.code, kExitOk) << dump.err;
  std::ofstream(dir / "cfg.toml") << dump.out;
  const auto again = Call({"--dump-config", "--config", dir / "cfg.toml", "mine"});
  ASSERT_EQ(again.code, kExitOk) << again.err;
  EXPECT_EQ(again.out, dump.out);
}

TEST(CliTest, FullPipeline) {
  testing::TempDir dir("cli_full");
  const std::string d = dir.path().string();
  const auto ok = [](const CallResult& r) {
    EXPECT_EQ(r.code, kExitOk) << r.err;
    return r;
  };
  ok(Call({"synth", "--scenes", "6", "--seed", "2", "--dim", "16", "--out", d}));
  ok(Call({"annotate", "--recon", d + "/recon.txt", "--out", d + "/pos.txt"}));
  ok(Call({"graph", "--recon", d + "/recon.txt", "--matches", d + "/matches.txt", "--out",
           d + "/graph.txt"}));
  ok(Call({"partition", "--graph", d + "/graph.txt", "--max-size", "8", "--out", d + "/part.txt"}));
  ok(Call({"mine", "--poslists", d + "/pos.txt", "--t", "200", "--seed", "4", "--out",
           d + "/batches.txt"}));
  ok(Call({"train", "--batches", d + "/batches.txt", "--inputs", d + "/descriptors.dvec",
           "--recon", d + "/recon.txt", "--head", "linear", "--loss", "rll", "--epochs", "1",
           "--iters", "200", "--lr", "1e-2", "--log", d + "/log.txt", "--out", d + "/ck.bin"}));
  std::ifstream log(d + "/log.txt");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line);) lines += !line.empty() && line[0] != '#';
  EXPECT_EQ(lines, 200u);

  double accuracy[2];
  for (int trained = 0; trained < 2; ++trained) {
    std::vector<std::string> embed = {"embed", "--maps", d + "/descriptors.dvec", "--head", "linear",
                                      "--out", d + "/e.dvec"};
    if (trained) {
      embed.push_back("--params");
      embed.push_back(d + "/ck.bin");
    }
    ok(Call(embed));
    ok(Call({"index", "--desc", d + "/e.dvec", "--out", d + "/idx.bin"}));
    ok(Call({"retrieve", "--index", d + "/idx.bin", "--desc", d + "/e.dvec", "--k", "10", "--out",
             d + "/pairs.txt"}));
    accuracy[trained] = AccuracyOf(ok(Call({"evaluate", "--pairs", d + "/pairs.txt", "--matches",
                                            d + "/matches.txt", "--recon", d + "/recon.txt"}))
                                       .out);
  }
  EXPECT_GT(accuracy[1], accuracy[0]);
}

}  // namespace
}  // namespace pairforge
