#ifndef NVREAD_IO_HPP
#define NVREAD_IO_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nvread/emitter.hpp"

namespace nvread {

std::string_view tool_version();

// FNV-1a over the raw config text; stamped into every output so runs can
// be traced back to their inputs.
std::uint64_t fnv1a(std::string_view data);

// Provenance header written as "# key: value" lines at the top of every
// text artifact. No timestamps: reruns must be bit-identical.
struct Provenance {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  std::string header() const;
};

// Cluster config: global keys followed by one [emitter] section per
// emitter. '#' starts a comment; "n_max = auto" (or omitted) requests the
// automatic truncation choice.
ClusterModel parse_cluster_config(const std::string& text);
ClusterModel load_cluster_config(const std::string& path,
                                 std::uint64_t* hash_out = nullptr);
std::string format_cluster_config(const ClusterModel& cluster);

// Two-column count/frequency text with provenance headers.
void write_histogram(const std::string& path, const Histogram& hist,
                     const Provenance& prov);
Histogram read_histogram(const std::string& path);

// Tab-separated table with provenance headers and one column-name line.
void write_table(const std::string& path, const std::vector<std::string>& columns,
                 const std::vector<std::vector<double>>& rows,
                 const Provenance& prov);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace nvread

#endif  // NVREAD_IO_HPP
