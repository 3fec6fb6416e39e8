#include "qad/corpus_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "qad/error.hpp"

namespace qad {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string at_line(std::size_t line_no) {
  return "line " + std::to_string(line_no) + ": ";
}

void check_no_newline(const std::string& text, const char* what,
                      std::size_t line_no) {
  if (text.find('\n') != std::string::npos ||
      text.find('\r') != std::string::npos) {
    throw ValidationError(at_line(line_no) + what + " contains a newline");
  }
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

void finish_write(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

Candidate parse_candidate(const json& j, std::size_t line_no) {
  if (!j.is_object()) {
    throw ParseError(at_line(line_no) + "hypothesis is not an object");
  }
  Candidate c;
  auto text = j.find("text");
  if (text == j.end() || !text->is_string()) {
    throw ParseError(at_line(line_no) + "hypothesis lacks a string \"text\"");
  }
  c.text = text->get<std::string>();
  check_no_newline(c.text, "hypothesis text", line_no);

  if (auto lp = j.find("logprob"); lp != j.end() && !lp->is_null()) {
    if (!lp->is_number()) {
      throw ParseError(at_line(line_no) + "\"logprob\" is not a number");
    }
    const double v = lp->get<double>();
    if (!std::isfinite(v) || v > 0.0) {
      throw ValidationError(at_line(line_no) +
                            "\"logprob\" must be finite and <= 0");
    }
    c.logprob = v;
  }
  if (auto fs = j.find("features"); fs != j.end() && !fs->is_null()) {
    if (!fs->is_object()) {
      throw ParseError(at_line(line_no) + "\"features\" is not an object");
    }
    for (const auto& [name, value] : fs->items()) {
      if (!value.is_number()) {
        throw ParseError(at_line(line_no) + "feature \"" + name +
                         "\" is not a number");
      }
      c.features.emplace(name, value.get<double>());
    }
  }
  if (auto count = j.find("count"); count != j.end() && !count->is_null()) {
    if (!count->is_number_integer()) {
      throw ParseError(at_line(line_no) + "\"count\" is not an integer");
    }
    c.multiplicity = count->get<std::int64_t>();
    if (c.multiplicity < 1) {
      throw ValidationError(at_line(line_no) + "\"count\" must be >= 1");
    }
  }
  if (auto tr = j.find("truncated"); tr != j.end() && tr->is_boolean()) {
    c.truncated = tr->get<bool>();
  }
  return c;
}

}  // namespace

std::int64_t NBestEntry::sample_count() const {
  std::int64_t total = 0;
  for (const auto& c : candidates) total += c.multiplicity;
  return total;
}

void WeightsTable::set(const std::string& name, double weight) {
  if (name.empty() || name.find_first_of("\t\n\r") != std::string::npos) {
    throw ValidationError("invalid weight name '" + name + "'");
  }
  if (!std::isfinite(weight)) {
    throw ValidationError("weight for '" + name + "' is not finite");
  }
  if (contains(name)) {
    throw ValidationError("repeated weight name '" + name + "'");
  }
  entries_.emplace_back(name, weight);
}

std::optional<double> WeightsTable::get(const std::string& name) const {
  for (const auto& [n, w] : entries_) {
    if (n == name) return w;
  }
  return std::nullopt;
}

bool WeightsTable::has_nonzero() const {
  for (const auto& [n, w] : entries_) {
    if (w != 0.0) return true;
  }
  return false;
}

NBestEntry parse_nbest_record(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(at_line(line_no) + "malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw ParseError(at_line(line_no) + "record is not an object");

  NBestEntry entry;
  auto id = j.find("id");
  if (id == j.end() || !id->is_number_integer()) {
    throw ParseError(at_line(line_no) + "record lacks an integer \"id\"");
  }
  entry.segment.id = id->get<std::int64_t>();
  if (entry.segment.id < 0) {
    throw ValidationError(at_line(line_no) + "\"id\" must be nonnegative");
  }
  auto src = j.find("src");
  if (src == j.end() || !src->is_string()) {
    throw ParseError(at_line(line_no) + "record lacks a string \"src\"");
  }
  entry.segment.text = src->get<std::string>();
  check_no_newline(entry.segment.text, "source", line_no);

  if (auto refs = j.find("refs"); refs != j.end() && !refs->is_null()) {
    if (!refs->is_array()) {
      throw ParseError(at_line(line_no) + "\"refs\" is not an array");
    }
    for (const auto& r : *refs) {
      if (!r.is_string()) {
        throw ParseError(at_line(line_no) + "reference is not a string");
      }
      entry.references.push_back(r.get<std::string>());
      check_no_newline(entry.references.back(), "reference", line_no);
    }
  }
  auto hyps = j.find("hyps");
  if (hyps == j.end() || !hyps->is_array()) {
    throw ParseError(at_line(line_no) + "record lacks a \"hyps\" array");
  }
  for (const auto& h : *hyps) entry.candidates.push_back(parse_candidate(h, line_no));
  return entry;
}

std::string format_nbest_record(const NBestEntry& entry) {
  ordered_json j;
  j["id"] = entry.segment.id;
  j["src"] = entry.segment.text;
  if (!entry.references.empty()) j["refs"] = entry.references;
  ordered_json hyps = ordered_json::array();
  for (const auto& c : entry.candidates) {
    ordered_json h;
    h["text"] = c.text;
    if (c.logprob) h["logprob"] = *c.logprob;
    if (!c.features.empty()) {
      ordered_json fs = ordered_json::object();
      for (const auto& [name, value] : c.features) fs[name] = value;
      h["features"] = std::move(fs);
    }
    if (c.multiplicity != 1) h["count"] = c.multiplicity;
    if (c.truncated) h["truncated"] = true;
    hyps.push_back(std::move(h));
  }
  j["hyps"] = std::move(hyps);
  return j.dump();
}

std::vector<std::size_t> collapse_duplicates(NBestEntry& entry) {
  std::vector<Candidate> merged;
  std::vector<std::size_t> mapping;
  std::unordered_map<std::string, std::size_t> first;
  mapping.reserve(entry.candidates.size());
  for (auto& c : entry.candidates) {
    auto [it, inserted] = first.emplace(c.text, merged.size());
    if (inserted) {
      merged.push_back(std::move(c));
    } else {
      merged[it->second].multiplicity += c.multiplicity;
    }
    mapping.push_back(it->second);
  }
  entry.candidates = std::move(merged);
  return mapping;
}

std::vector<NBestEntry> read_nbest(const std::filesystem::path& path,
                                   const ReadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open N-best file: " + path.string());

  std::vector<NBestEntry> entries;
  std::set<std::int64_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    NBestEntry entry = parse_nbest_record(line, line_no);
    if (!seen.insert(entry.segment.id).second) {
      throw ValidationError(at_line(line_no) + "duplicate id " +
                            std::to_string(entry.segment.id));
    }
    if (!entries.empty() && entry.segment.id < entries.back().segment.id) {
      throw ValidationError(at_line(line_no) + "id " + std::to_string(entry.segment.id) +
                            " follows id " + std::to_string(entries.back().segment.id) +
                            " (ids must increase)");
    }
    if (options.dedup) collapse_duplicates(entry);
    entries.push_back(std::move(entry));
  }
  if (in.bad()) throw IoError("read failed: " + path.string());
  return entries;
}

void write_nbest(const std::vector<NBestEntry>& entries,
                 const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& e : entries) out << format_nbest_record(e) << '\n';
  finish_write(out, path);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (in.bad()) throw IoError("read failed: " + path.string());
  return lines;
}

void write_lines(const std::vector<std::string>& lines,
                 const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& l : lines) out << l << '\n';
  finish_write(out, path);
}

std::vector<std::pair<std::string, std::string>> read_parallel(
    const std::filesystem::path& src_path,
    const std::filesystem::path& ref_path) {
  auto src = read_lines(src_path);
  auto ref = read_lines(ref_path);
  if (src.size() != ref.size()) {
    throw ValidationError("parallel files are not aligned: " +
                          std::to_string(src.size()) + " vs " +
                          std::to_string(ref.size()) + " lines");
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    pairs.emplace_back(std::move(src[i]), std::move(ref[i]));
  }
  return pairs;
}

std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

WeightsTable read_weights(const std::filesystem::path& path) {
  WeightsTable table;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(at_line(line_no) + "expected name<TAB>weight");
    }
    const std::string name = line.substr(0, tab);
    const std::string number = line.substr(tab + 1);
    double value = 0.0;
    const char* first = number.data();
    const char* last = number.data() + number.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
      throw ParseError(at_line(line_no) + "weight '" + number +
                       "' is not a finite decimal");
    }
    try {
      table.set(name, value);
    } catch (const ValidationError& e) {
      throw ValidationError(at_line(line_no) + e.what());
    }
  }
  return table;
}

void write_weights(const WeightsTable& weights,
                   const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& [name, w] : weights.entries()) {
    out << name << '\t' << format_double(w) << '\n';
  }
  finish_write(out, path);
}

}  // namespace qad
