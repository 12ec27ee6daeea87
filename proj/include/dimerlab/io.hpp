#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "lattice.hpp"

namespace dimerlab::io {

using json = nlohmann::json;

inline CellSpec spec_from_json(const json& j) {
  try {
    CellSpec s;
    if (!j.is_object()) throw Error(Errc::InvalidSpec, "spec must be a JSON object");
    s.m = j.at("m").get<int>();
    if (j.contains("planar_weights"))
      for (const auto& w : j.at("planar_weights")) {
        std::pair<int, int> key{w.at("ell").get<int>(), w.at("j").get<int>()};
        if (s.planar_weights.count(key))
          throw Error(Errc::InvalidSpec, "duplicate planar weight for ell=" + std::to_string(key.first) +
                                             " j=" + std::to_string(key.second));
        s.planar_weights[key] = w.at("weight").get<double>();
      }
    if (j.contains("nonplanar"))
      for (const auto& e : j.at("nonplanar")) {
        NonplanarEdge np;
        np.bl = e.at("bl").get<int>();
        np.wh = e.at("wh").get<int>();
        np.weight = e.value("weight", 1.0);
        for (const auto& c : e.at("crossings")) np.crossings.push_back({c.at("ell").get<int>(), c.at("j").get<int>()});
        s.nonplanar.push_back(np);
      }
    return s;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidSpec, std::string("malformed spec: ") + e.what());
  }
}

inline json spec_to_json(const CellSpec& s) {
  json j;
  j["m"] = s.m;
  j["planar_weights"] = json::array();
  for (const auto& [k, w] : s.planar_weights) j["planar_weights"].push_back({{"ell", k.first}, {"j", k.second}, {"weight", w}});
  j["nonplanar"] = json::array();
  for (const auto& e : s.nonplanar) {
    json c = json::array();
    for (auto r : e.crossings) c.push_back({{"ell", r.ell}, {"j", r.j}});
    j["nonplanar"].push_back({{"bl", e.bl}, {"wh", e.wh}, {"weight", e.weight}, {"crossings", c}});
  }
  return j;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::InvalidSpec, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline CellSpec parse_spec(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidSpec, std::string("spec is not valid JSON: ") + e.what());
  }
  return spec_from_json(j);
}

inline CellSpec load_spec(const std::filesystem::path& p) { return parse_spec(read_file(p)); }

// SHA-1 of "blob <size>\0<content>", the object id git assigns to the same bytes.
inline std::string git_blob_hash(const std::string& content) {
  std::string data = "blob " + std::to_string(content.size());
  data.push_back('\0');
  data += content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw Error(Errc::NumericalFailure, "SHA-1 digest failed");
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string utc_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct RunManifest {
  std::string command;
  std::string spec_path;
  std::string spec_hash;
  json parameters = json::object();
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;

  // Identity of the run: the command, the spec content and the parameters. Paths and times are excluded.
  std::string hash() const {
    json id = {{"command", command}, {"spec_hash", spec_hash}, {"parameters", parameters}};
    return git_blob_hash(id.dump());
  }

  json to_json() const {
    return {{"command", command},   {"spec_path", spec_path}, {"spec_hash", spec_hash}, {"parameters", parameters},
            {"outputs", outputs},   {"started", started},     {"finished", finished},   {"hash", hash()}};
  }

  static RunManifest from_json(const json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.spec_path = j.at("spec_path").get<std::string>();
    m.spec_hash = j.at("spec_hash").get<std::string>();
    m.parameters = j.at("parameters");
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.started = j.value("started", "");
    m.finished = j.value("finished", "");
    if (j.contains("hash") && j.at("hash").get<std::string>() != m.hash())
      throw Error(Errc::InvariantViolation, "manifest hash does not match its contents");
    return m;
  }
};

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// CSV with a "# manifest <hash>" line, then the header row.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& p, const std::vector<std::string>& header, const std::string& manifest)
      : out_(p), width_(header.size()) {
    if (!out_) throw Error(Errc::InvalidSpec, "cannot write " + p.string());
    out_ << "# manifest " << manifest << "\n";
    line(header);
  }

  void row(const std::vector<double>& v) {
    std::vector<std::string> s;
    for (double x : v) s.push_back(format_number(x));
    line(s);
  }

  void line(const std::vector<std::string>& v) {
    if (v.size() != width_) throw Error(Errc::DimensionMismatch, "CSV row width differs from the header");
    for (std::size_t i = 0; i < v.size(); ++i) out_ << (i ? "," : "") << v[i];
    out_ << "\n";
  }

 private:
  std::ofstream out_;
  std::size_t width_;
};

inline void write_json(const std::filesystem::path& p, json j, const std::string& manifest) {
  j["manifest"] = manifest;
  std::ofstream out(p);
  if (!out) throw Error(Errc::InvalidSpec, "cannot write " + p.string());
  out << j.dump(2) << "\n";
}

}  // namespace dimerlab::io
