#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "lipvox/config.hpp"
#include "test_util.hpp"

using namespace lipvox;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(LIPVOX_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int raw = pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("gen-data --speakers 2").status, 2);
  EXPECT_EQ(run("no-such-command").status, 2);
  EXPECT_EQ(run("train --corpus x --out y --batch-size nope").status, 2);
}

TEST(Cli, HelpListsEveryFieldWithDefault) {
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "corpus"}, {"pretrain-surrogates", "surrogates"}, {"train", "train"}, {"finetune", "train"}};
  for (const auto& [cmd, section] : commands) {
    const auto r = run(cmd + " --help");
    EXPECT_EQ(r.status, 0) << cmd;
    for (const auto& f : config::fields()) {
      if (f.section != section || f.key == "seed") continue;
      std::string flag = "--";
      for (char c : f.key) flag += c == '_' ? '-' : c;
      const auto pos = r.out.find(flag + " ");
      ASSERT_NE(pos, std::string::npos) << cmd << " " << flag;
      EXPECT_NE(r.out.find('[', pos), std::string::npos) << flag;
    }
    EXPECT_NE(r.out.find("--seed"), std::string::npos);
    EXPECT_NE(r.out.find("--config"), std::string::npos);
  }
  for (const std::string cmd : {"synth", "eval", "gstrength"}) EXPECT_EQ(run(cmd + " --help").status, 0);
}

TEST(Cli, GenDataIsDeterministicAndEchoesConfig) {
  support::TempDir dir;
  const std::string flags = "--speakers 2 --utts 1 --seconds 1 --seed 4";
  const auto a = run("gen-data " + flags + " --out " + (dir / "a").string());
  const auto b = run("gen-data " + flags + " --out " + (dir / "b").string());
  ASSERT_EQ(a.status, 0) << a.out;
  ASSERT_EQ(b.status, 0) << b.out;
  EXPECT_NE(a.out.find("[corpus]"), std::string::npos);
  EXPECT_NE(a.out.find("seed = 4"), std::string::npos);
  EXPECT_NE(a.out.find("manifest.json"), std::string::npos);
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
}

TEST(Cli, ConfigFileOverriddenByFlagsAndUnknownKeysRejected) {
  support::TempDir dir;
  {
    std::ofstream(dir / "cfg.toml") << "seed = 12\n[corpus]\nspeakers = 3\nutts = 1\nseconds = 1.0\n";
    std::ofstream(dir / "bad.toml") << "[corpus]\nspeekers = 3\n";
  }
  const auto r = run("gen-data --config " + (dir / "cfg.toml").string() + " --speakers 2 --out " +
                     (dir / "c").string());
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("speakers = 2"), std::string::npos);
  EXPECT_NE(r.out.find("seed = 12"), std::string::npos);
  const auto bad = run("gen-data --config " + (dir / "bad.toml").string() + " --out " + (dir / "d").string());
  EXPECT_EQ(bad.status, 2);
  EXPECT_NE(bad.out.find("speekers"), std::string::npos);
}

TEST(Cli, RuntimeErrorsExitOneWithMessage) {
  support::TempDir dir;
  const auto r = run("eval --ckpt " + (dir / "missing.ckpt").string() + " --corpus " + dir.path().string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("error:"), std::string::npos);
}
