// Scripted external scorer used by the tests.
//
//   stub_scorer [--name N] [--kind ref|noref] [--mode M] [--value V]
//               [--bad-at K] [--crash-at K] [--sleep S] [--count-file F]
//               [--handshake LINE]
//
// Modes: length (hyp token count), const (V), exact (1 if hyp == ref),
// overlap (shared token count of hyp and ref), srclen (src token count).
// Row numbers K count from 0 over the process lifetime.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "qad/external_scorer.hpp"

namespace {

std::vector<std::string> split_tab(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(qad::unescape_field(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(qad::unescape_field(cur));
  return out;
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> w;
  for (std::string t; in >> t;) w.push_back(t);
  return w;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"test scorer"};
  std::string name = "stub", kind = "noref", mode = "length", count_file, handshake;
  double value = 0.5, sleep_s = 0.0;
  long bad_at = -1, crash_at = -1;
  app.add_option("--name", name);
  app.add_option("--kind", kind);
  app.add_option("--mode", mode);
  app.add_option("--value", value);
  app.add_option("--bad-at", bad_at);
  app.add_option("--crash-at", crash_at);
  app.add_option("--sleep", sleep_s);
  app.add_option("--count-file", count_file);
  app.add_option("--handshake", handshake);
  CLI11_PARSE(app, argc, argv);

  if (!handshake.empty()) {
    std::cout << (handshake == "none" ? "" : handshake + "\n") << std::flush;
    if (handshake == "none") return 0;
  } else {
    std::cout << "QAD-SCORER 1 " << name << " " << kind << "\n" << std::flush;
  }

  std::ofstream counter;
  if (!count_file.empty()) counter.open(count_file, std::ios::app);

  long row = 0;
  for (std::string line; std::getline(std::cin, line); ++row) {
    if (row == crash_at) {
      std::cerr << "stub: crashing on row " << row << "\n";
      return 7;
    }
    if (sleep_s > 0.0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(sleep_s));
    }
    if (counter.is_open()) counter << "1\n" << std::flush;
    if (row == bad_at) {
      std::cout << "not-a-number\n" << std::flush;
      continue;
    }
    const auto f = split_tab(line);
    const std::string& src = f.at(0);
    const std::string& hyp = f.size() > 1 ? f[1] : src;
    const std::string ref = f.size() > 2 ? f[2] : std::string();
    double score = 0.0;
    if (mode == "length") {
      score = static_cast<double>(words(hyp).size());
    } else if (mode == "const") {
      score = value;
    } else if (mode == "exact") {
      score = hyp == ref ? 1.0 : 0.0;
    } else if (mode == "overlap") {
      const auto h = words(hyp);
      const auto r = words(ref);
      const std::set<std::string> rs(r.begin(), r.end());
      for (const auto& w : h) score += rs.count(w) ? 1.0 : 0.0;
    } else if (mode == "srclen") {
      score = static_cast<double>(words(src).size());
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", score);
    std::cout << buf << "\n";
    // Answer rows as they arrive so the parent never deadlocks on big batches.
    std::cout.flush();
  }
  return 0;
}
