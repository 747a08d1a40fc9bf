#pragma once

// Shared test helpers: a seeded generator for property tests, scratch
// directories and subprocess capture.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace testing_support {

namespace fs = std::filesystem;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  bool bit() { return (rng_() & 1U) != 0; }
  int int_in(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  double real_in(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[index(v.size())];
  }

  // Arbitrary bytes, biased towards printable ASCII, newlines and colons.
  std::string bytes(std::size_t max_len) {
    std::string out;
    const auto len = static_cast<std::size_t>(int_in(0, static_cast<int>(max_len)));
    for (std::size_t i = 0; i < len; ++i) {
      const int roll = int_in(0, 19);
      if (roll == 0) out.push_back('\n');
      else if (roll == 1) out.push_back(':');
      else if (roll == 2) out.push_back(static_cast<char>(int_in(0, 255)));
      else if (roll == 3) out.push_back(static_cast<char>('0' + int_in(0, 9)));
      else out.push_back(static_cast<char>(int_in(32, 126)));
    }
    return out;
  }

  // Concatenation of fragments with random glue; good at producing
  // near-miss parser inputs.
  std::string splice(const std::vector<std::string>& fragments, int pieces) {
    std::string out;
    for (int i = 0; i < pieces; ++i) {
      if (bit()) out += pick(fragments);
      else out += bytes(6);
    }
    return out;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("decc-test-" + std::to_string(::getpid()) + "-" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << body;
}

// Copies the generated demo (dataset, fixture, configs) without its cache.
inline void copy_demo(const fs::path& demo, const fs::path& dst) {
  fs::create_directories(dst);
  for (const char* f : {"dataset.jsonl", "config.json", "config_all.json"}) fs::copy_file(demo / f, dst / f);
  fs::copy(demo / "fixture", dst / "fixture", fs::copy_options::recursive);
}

struct RunResult {
  int status = -1;
  std::string out;
  std::string err;
};

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out.push_back(c);
  }
  return out + "'";
}

inline RunResult run(const std::string& exe, const std::vector<std::string>& args, const fs::path& scratch) {
  const auto out_file = scratch / "stdout.txt";
  const auto err_file = scratch / "stderr.txt";
  std::string cmd = shell_quote(exe);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += " >" + shell_quote(out_file.string()) + " 2>" + shell_quote(err_file.string());
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

}  // namespace testing_support
