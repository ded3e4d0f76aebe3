#pragma once
// Helpers for driving the jjtls executable from tests.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

namespace jjtls::testing {

namespace fs = std::filesystem;

struct CliResult {
  int code = -1;
  std::string err;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

/// Runs `jjtls <args>`; stdout is discarded unless `stdout_to` is given.
inline CliResult run_cli(const std::string& args, const fs::path& scratch,
                         const fs::path& stdout_to = "/dev/null") {
  fs::create_directories(scratch);
  const auto err = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + JJTLS_CLI_PATH + "\" " + args + " >\"" +
                          stdout_to.string() + "\" 2>\"" + err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.err = slurp(err);
  return r;
}

/// Fresh per-test directory under the system temp directory.
inline fs::path scratch_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("jjtls_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

inline fs::path fixture(const std::string& name) { return fs::path(JJTLS_FIXTURE_DIR) / name; }

inline std::size_t count_rows(const std::string& csv) {
  std::size_t n = 0;
  for (char c : csv) n += c == '\n';
  return n == 0 ? 0 : n - 1;
}

}  // namespace jjtls::testing
