#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fstream>
#include <regex>
#include <sstream>

#include "lfat/cli.hpp"
#include "lfat/protocol.hpp"
#include "support.hpp"

namespace lfat::cli {
namespace {

struct Invocation {
  int code;
  std::string out;
  std::string err;
};

Invocation run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class HelpGolden : public ::testing::TestWithParam<std::string> {};

TEST_P(HelpGolden, MatchesFrozenText) {
  const std::string cmd = GetParam();
  std::vector<std::string> args;
  if (cmd != "main") args.push_back(cmd);
  args.push_back("--help");
  const Invocation r = run(args);
  EXPECT_EQ(r.code, kOk);
  const std::string path = std::string(LFAT_GOLDEN_DIR) + "/help-" + cmd + ".txt";
  if (std::getenv("LFAT_UPDATE_GOLDEN")) std::ofstream(path, std::ios::binary) << r.out;
  EXPECT_EQ(r.out, slurp(path)) << "golden " << path;
}

INSTANTIATE_TEST_SUITE_P(Cli, HelpGolden,
                         ::testing::Values("main", "gen-data", "train", "run-prover", "attest",
                                           "evaluate", "report"),
                         [](const auto& info) {
                           std::string n = info.param;
                           std::replace(n.begin(), n.end(), '-', '_');
                           return n;
                         });

TEST(Cli, HelpListsEveryFlagWithDefault) {
  const Invocation r = run({"gen-data", "--help"});
  for (const char* flag : {"--normal", "--attack", "--seed", "--attack-mix", "--out",
                           "--period-us", "--duration-us", "--trigger", "--input-variation"}) {
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  }
  EXPECT_NE(r.out.find("[1500]"), std::string::npos);
  EXPECT_NE(r.out.find("[300000]"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, kUsageError);
  EXPECT_EQ(run({"bogus"}).code, kUsageError);
  EXPECT_EQ(run({"train", "--no-such-flag"}).code, kUsageError);
  EXPECT_EQ(run({"train", "--k", "zero"}).code, kUsageError);
  EXPECT_EQ(run({"gen-data", "--attack-mix", "2"}).code, kUsageError);
  EXPECT_EQ(run({"attest", "--model", "x"}).code, kUsageError);  // no key
}

TEST(Cli, OperationalErrors) {
  testing::TempDir d;
  const Invocation r = run({"train", "--manifest", d / "missing.csv"});
  EXPECT_EQ(r.code, kOperationalError);
  EXPECT_NE(r.err.find("IoError"), std::string::npos);
  EXPECT_EQ(run({"report", "--in", d / "none.csv"}).code, kOperationalError);
}

TEST(Cli, PipelineInProcess) {
  testing::TempDir d;
  Invocation r = run({"gen-data", "--normal", "60", "--attack", "20", "--out", d / "ds"});
  ASSERT_EQ(r.code, kOk) << r.err;
  r = run({"train", "--manifest", d / "ds/manifest.csv", "--k", "5", "--train-count", "40",
           "--model", d / "m.lfm", "--store", d / "store.csv"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.err.find("skipped 20 attack"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(d / "store.csv"));
  r = run({"evaluate", "--manifest", d / "ds/manifest.csv", "--model", d / "m.lfm",
           "--skip-normal", "40", "--out", d / "r.csv"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("Accuracy"), std::string::npos);
  r = run({"report", "--in", d / "r.csv", "--csv"});
  EXPECT_EQ(r.out, slurp(d / "r.csv"));
  r = run({"train", "--manifest", d / "ds/manifest.csv", "--train-count", "5"});
  EXPECT_EQ(r.code, kOperationalError);
  EXPECT_NE(r.err.find("InsufficientData"), std::string::npos);
}

// ------------------------------------------------------------ subprocesses

struct Child {
  pid_t pid = -1;
  int out_fd = -1;
};

Child spawn(const std::vector<std::string>& args) {
  int pipefd[2];
  if (::pipe(pipefd) != 0) throw std::runtime_error("pipe");
  const pid_t pid = ::fork();
  if (pid == 0) {
    ::dup2(pipefd[1], 1);
    ::close(pipefd[0]);
    ::close(pipefd[1]);
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execv(argv[0], argv.data());
    ::_exit(127);
  }
  ::close(pipefd[1]);
  return {pid, pipefd[0]};
}

std::string read_line(int fd) {
  std::string line;
  char c;
  while (::read(fd, &c, 1) == 1 && c != '\n') line += c;
  return line;
}

std::string read_all(int fd) {
  std::string s;
  char buf[512];
  for (ssize_t n; (n = ::read(fd, buf, sizeof buf)) > 0;) s.append(buf, n);
  return s;
}

int wait_exit(pid_t pid) {
  int status = 0;
  ::waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class CliEndToEnd : public ::testing::Test {
 protected:
  void SetUp() override {
    std::ofstream(dir / "key") << std::string(64, 'c') << "\n";
    ASSERT_EQ(run({"gen-data", "--normal", "300", "--attack", "0", "--seed", "5000", "--out",
                   dir / "ds"})
                  .code,
              kOk);
    ASSERT_EQ(run({"train", "--manifest", dir / "ds/manifest.csv", "--train-count", "0",
                   "--model", dir / "m.lfm"})
                  .code,
              kOk);
  }

  // Starts a prover for one round and returns (child, port).
  std::pair<Child, std::string> start_prover(const std::string& workload) {
    Child c = spawn({LFAT_CLI_PATH, "run-prover", "--listen", "127.0.0.1:0", "--key-file",
                     dir / "key", "--workload", workload, "--max-rounds", "1", "--prover-id",
                     "cli-" + workload});
    const std::string line = read_line(c.out_fd);
    std::smatch m;
    EXPECT_TRUE(std::regex_search(line, m, std::regex("listening on 127\\.0\\.0\\.1:(\\d+)")))
        << line;
    return {c, m.size() > 1 ? m[1].str() : "0"};
  }

  Invocation attest(const std::string& port, std::vector<std::string> extra = {}) {
    const std::string cfg = dir / ("attest-" + port + ".conf");
    std::ofstream(cfg) << "# verifier settings\nkey_file=" << (dir / "key")
                       << "\nmodel=" << (dir / "m.lfm") << "\ntrigger=N2-entry\n";
    std::vector<std::string> args{"attest", "--config", cfg, "--prover", "127.0.0.1:" + port,
                                  "--audit-log", dir / "audit.tsv"};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }

  testing::TempDir dir;
};

TEST_F(CliEndToEnd, NormalProverExitsZero) {
  auto [child, port] = start_prover("normal");
  const Invocation r = attest(port);
  EXPECT_EQ(r.code, kOk) << r.out << r.err;
  EXPECT_NE(r.out.find("verdict=Normal"), std::string::npos);
  EXPECT_NE(r.out.find("prover=cli-normal"), std::string::npos);
  EXPECT_EQ(wait_exit(child.pid), 0);
  EXPECT_NE(read_all(child.out_fd).find("served 1"), std::string::npos);
  EXPECT_NE(slurp(dir / "audit.tsv").find("cli-normal\tN2-entry\tNormal"), std::string::npos);
}

TEST_F(CliEndToEnd, AttackProverExitsThree) {
  auto [child, port] = start_prover("code-injection");
  const Invocation r = attest(port);
  EXPECT_EQ(r.code, kAnomalous) << r.out << r.err;
  EXPECT_NE(r.out.find("verdict=Anomalous"), std::string::npos);
  EXPECT_EQ(wait_exit(child.pid), 0);
}

TEST_F(CliEndToEnd, ProtocolRejectExitsFour) {
  auto [child, port] = start_prover("normal");
  const Invocation r = attest(port, {"--trigger", "N9-entry"});
  EXPECT_EQ(r.code, kProtocolReject) << r.out << r.err;
  EXPECT_NE(r.out.find("UnknownTrigger"), std::string::npos);
  EXPECT_EQ(wait_exit(child.pid), 0);
}

TEST_F(CliEndToEnd, UnreachableExitsOne) {
  const Invocation r = attest("1", {"--timeout-ms", "200"});
  EXPECT_EQ(r.code, kOperationalError);
  EXPECT_NE(r.err.find("ProverUnreachable"), std::string::npos);
}

TEST_F(CliEndToEnd, SigtermStopsIdleProver) {
  Child c = spawn({LFAT_CLI_PATH, "run-prover", "--listen", "127.0.0.1:0", "--key-file",
                   dir / "key"});
  read_line(c.out_fd);
  ::kill(c.pid, SIGTERM);
  EXPECT_EQ(wait_exit(c.pid), 0);
}

TEST_F(CliEndToEnd, ConfigRejectsUnknownKeys) {
  std::ofstream(dir / "bad.conf") << "model=x\ncolour=blue\n";
  const Invocation r = run({"attest", "--config", dir / "bad.conf"});
  EXPECT_NE(r.code, kOk);
  EXPECT_NE(r.err.find("colour"), std::string::npos);
}

}  // namespace
}  // namespace lfat::cli
