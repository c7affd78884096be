#include "nvread/io.hpp"

#include <cctype>
#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nvread {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string_view tool_version() { return "0.1.0"; }

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string Provenance::header() const {
  std::ostringstream out;
  out << "# tool_version: " << tool_version() << "\n";
  out << "# seed: " << seed << "\n";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, config_hash);
  out << "# config_hash: " << buf << "\n";
  return out.str();
}

ClusterModel parse_cluster_config(const std::string& text) {
  double readout_time = -1.0;
  int n_max = -1;
  std::vector<EmitterParams> emitters;
  EmitterParams* current = nullptr;

  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    auto hash_pos = raw.find('#');
    if (hash_pos != std::string::npos) raw.erase(hash_pos);
    std::string line = trim(raw);
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw std::invalid_argument("cluster config line " + std::to_string(lineno) +
                                  ": " + why);
    };

    if (line == "[emitter]") {
      emitters.emplace_back();
      current = &emitters.back();
      continue;
    }
    if (line.front() == '[') fail("unknown section " + line);

    auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty() || value.empty()) fail("expected key = value");

    auto number = [&] {
      try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        fail("not a number: " + value);
        return 0.0;
      }
    };

    if (!current) {
      if (key == "readout_time") readout_time = number();
      else if (key == "n_max") {
        if (value != "auto") n_max = static_cast<int>(number());
      } else fail("unknown global key " + key);
      continue;
    }
    if (key == "gamma_bright") current->gamma_bright = number();
    else if (key == "gamma_dark") current->gamma_dark = number();
    else if (key == "k_ion") current->k_ion = number();
    else if (key == "k_rec") current->k_rec = number();
    else if (key == "p_init_neg") current->p_init_neg = number();
    else if (key == "p_shelf") current->p_shelf = number();
    else if (key == "eta_ionize") current->eta_ionize = number();
    else fail("unknown emitter key " + key);
  }

  if (readout_time <= 0.0)
    throw std::invalid_argument("cluster config: missing or invalid readout_time");
  if (emitters.empty())
    throw std::invalid_argument("cluster config: no [emitter] sections");
  return ClusterModel::make(std::move(emitters), readout_time, n_max);
}

ClusterModel load_cluster_config(const std::string& path, std::uint64_t* hash_out) {
  std::string text = read_file(path);
  if (hash_out) *hash_out = fnv1a(text);
  return parse_cluster_config(text);
}

std::string format_cluster_config(const ClusterModel& cluster) {
  std::ostringstream out;
  out << "readout_time = " << format_double(cluster.readout_time) << "\n";
  out << "n_max = " << cluster.n_max << "\n";
  for (const auto& e : cluster.emitters) {
    out << "\n[emitter]\n";
    out << "gamma_bright = " << format_double(e.gamma_bright) << "\n";
    out << "gamma_dark = " << format_double(e.gamma_dark) << "\n";
    out << "k_ion = " << format_double(e.k_ion) << "\n";
    out << "k_rec = " << format_double(e.k_rec) << "\n";
    out << "p_init_neg = " << format_double(e.p_init_neg) << "\n";
    out << "p_shelf = " << format_double(e.p_shelf) << "\n";
    out << "eta_ionize = " << format_double(e.eta_ionize) << "\n";
  }
  return out.str();
}

void write_histogram(const std::string& path, const Histogram& hist,
                     const Provenance& prov) {
  std::ostringstream out;
  out << prov.header();
  out << "# total_shots: " << hist.total_shots << "\n";
  out << "# columns: count frequency\n";
  for (std::size_t n = 0; n < hist.counts.size(); ++n)
    out << n << "\t" << hist.counts[n] << "\n";
  write_file(path, out.str());
}

Histogram read_histogram(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<std::uint64_t> counts;
  std::uint64_t declared_shots = 0;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      auto pos = t.find("total_shots:");
      if (pos != std::string::npos)
        declared_shots = std::strtoull(t.c_str() + pos + 12, nullptr, 10);
      continue;
    }
    std::istringstream row(t);
    std::uint64_t n = 0, c = 0;
    if (!(row >> n >> c) || n != counts.size())
      throw std::runtime_error("malformed histogram file: " + path);
    counts.push_back(c);
  }
  if (counts.empty()) throw std::runtime_error("empty histogram file: " + path);
  Histogram hist(static_cast<int>(counts.size()) - 1);
  hist.counts = std::move(counts);
  for (std::uint64_t c : hist.counts) hist.total_shots += c;
  if (declared_shots != 0 && declared_shots != hist.total_shots)
    throw std::runtime_error("histogram file shot count mismatch: " + path);
  return hist;
}

void write_table(const std::string& path, const std::vector<std::string>& columns,
                 const std::vector<std::vector<double>>& rows,
                 const Provenance& prov) {
  std::ostringstream out;
  out << prov.header();
  for (std::size_t i = 0; i < columns.size(); ++i)
    out << (i ? "\t" : "") << columns[i];
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != columns.size())
      throw std::invalid_argument("table row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i)
      out << (i ? "\t" : "") << format_double(row[i]);
    out << "\n";
  }
  write_file(path, out.str());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
  if (!out) throw std::runtime_error("failed writing file: " + path);
}

}  // namespace nvread
