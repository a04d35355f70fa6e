#ifndef CRITAFFINE_NUPC_IO_HPP
#define CRITAFFINE_NUPC_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "error.hpp"
#include "invariant.hpp"

namespace critaffine {

// Binary layout (little-endian):
//   "NUPC1" (5 bytes), u32 d, u64 n_points, f64 weights[n], f64 coords[n*d].
// Excursion ids live next to it in "<path>.ids":
//   "NUPCID1" (7 bytes), u64 n_points, u32 excursion[n], u64 m, u32 cluster_of_excursion[m].
// Metadata goes to "<path>.json".

namespace detail {

static_assert(std::endian::native == std::endian::little, "NUPC1 writer assumes a little-endian host");

template <class T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
void put_array(std::ofstream& out, const T* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
}

template <class T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error(ErrorKind::Io, "truncated point cloud file");
  return v;
}

template <class T>
void get_array(std::ifstream& in, T* p, std::size_t n) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
  if (!in) throw Error(ErrorKind::Io, "truncated point cloud file");
}

}  // namespace detail

inline nlohmann::ordered_json meta_to_json(const CloudMeta& m, int dim, std::size_t n_points) {
  nlohmann::ordered_json j;
  j["format"] = "NUPC1";
  j["dim"] = dim;
  j["n_points"] = n_points;
  j["normalization"] = m.normalization;
  j["spec_hash"] = m.spec_hash;
  j["seed"] = m.seed;
  j["m_excursions"] = m.m_excursions;
  j["n_max"] = m.n_max;
  j["n_truncated"] = m.n_truncated;
  j["truncated_fraction"] = m.truncated_fraction;
  j["n_clusters"] = m.n_clusters;
  if (std::isfinite(m.store_log_radius))
    j["store_log_radius"] = m.store_log_radius;
  else
    j["store_log_radius"] = nullptr;
  j["mass_beyond_radius"] = m.mass_beyond_radius;
  j["nuL_samples"] = m.nuL_samples;
  j["nuL_redraws"] = m.nuL_redraws;
  j["tol"] = m.tol;
  j["mean_excursion_length"] = m.mean_excursion_length;
  return j;
}

inline CloudMeta meta_from_json(const nlohmann::json& j) {
  CloudMeta m;
  m.normalization = j.value("normalization", m.normalization);
  m.spec_hash = j.value("spec_hash", std::string{});
  m.seed = j.value("seed", std::uint64_t{0});
  m.m_excursions = j.value("m_excursions", std::int64_t{0});
  m.n_max = j.value("n_max", std::int64_t{0});
  m.n_truncated = j.value("n_truncated", std::int64_t{0});
  m.truncated_fraction = j.value("truncated_fraction", 0.0);
  m.n_clusters = j.value("n_clusters", std::int64_t{0});
  m.store_log_radius = j.contains("store_log_radius") && j["store_log_radius"].is_number()
                           ? j["store_log_radius"].get<double>()
                           : kInf;
  m.mass_beyond_radius = j.value("mass_beyond_radius", 0.0);
  m.nuL_samples = j.value("nuL_samples", std::int64_t{0});
  m.nuL_redraws = j.value("nuL_redraws", std::int64_t{0});
  m.tol = j.value("tol", 0.0);
  m.mean_excursion_length = j.value("mean_excursion_length", 0.0);
  return m;
}

inline void write_cloud(const PointCloudMeasure& nu, const std::string& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
    out.write("NUPC1", 5);
    detail::put(out, static_cast<std::uint32_t>(nu.dim));
    detail::put(out, static_cast<std::uint64_t>(nu.size()));
    detail::put_array(out, nu.weights.data(), nu.weights.size());
    detail::put_array(out, nu.coords.data(), nu.coords.size());
    if (!out) throw Error(ErrorKind::Io, "write failed: " + path);
  }
  {
    std::ofstream out(path + ".ids", std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot open " + path + ".ids for writing");
    out.write("NUPCID1", 7);
    detail::put(out, static_cast<std::uint64_t>(nu.excursion.size()));
    detail::put_array(out, nu.excursion.data(), nu.excursion.size());
    detail::put(out, static_cast<std::uint64_t>(nu.cluster_of_excursion.size()));
    detail::put_array(out, nu.cluster_of_excursion.data(), nu.cluster_of_excursion.size());
    if (!out) throw Error(ErrorKind::Io, "write failed: " + path + ".ids");
  }
  std::ofstream meta(path + ".json");
  if (!meta) throw Error(ErrorKind::Io, "cannot open " + path + ".json for writing");
  meta << meta_to_json(nu.meta, nu.dim, nu.size()).dump(2) << "\n";
}

inline PointCloudMeasure read_cloud(const std::string& path) {
  PointCloudMeasure nu;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, "NUPC1", 5) != 0) throw Error(ErrorKind::Io, path + " is not a NUPC1 file");
    nu.dim = static_cast<int>(detail::get<std::uint32_t>(in));
    const auto n = detail::get<std::uint64_t>(in);
    nu.weights.resize(n);
    nu.coords.resize(n * static_cast<std::uint64_t>(nu.dim));
    detail::get_array(in, nu.weights.data(), n);
    detail::get_array(in, nu.coords.data(), nu.coords.size());
  }
  {
    std::ifstream in(path + ".ids", std::ios::binary);
    if (in) {
      char magic[7];
      in.read(magic, 7);
      if (!in || std::memcmp(magic, "NUPCID1", 7) != 0) throw Error(ErrorKind::Io, path + ".ids is malformed");
      const auto n = detail::get<std::uint64_t>(in);
      if (n != nu.size()) throw Error(ErrorKind::Io, path + ".ids does not match the cloud");
      nu.excursion.resize(n);
      detail::get_array(in, nu.excursion.data(), n);
      const auto m = detail::get<std::uint64_t>(in);
      nu.cluster_of_excursion.resize(m);
      detail::get_array(in, nu.cluster_of_excursion.data(), m);
    } else {
      // Without ids every point is its own cluster.
      nu.excursion.resize(nu.size());
      nu.cluster_of_excursion.resize(nu.size());
      for (std::size_t i = 0; i < nu.size(); ++i)
        nu.excursion[i] = nu.cluster_of_excursion[i] = static_cast<std::uint32_t>(i);
    }
  }
  std::ifstream meta(path + ".json");
  if (meta) {
    try {
      nu.meta = meta_from_json(nlohmann::json::parse(meta));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Io, path + ".json: " + e.what());
    }
  }
  std::uint32_t max_cluster = 0;
  for (auto c : nu.cluster_of_excursion) max_cluster = std::max(max_cluster, c);
  if (nu.meta.n_clusters <= 0) nu.meta.n_clusters = nu.cluster_of_excursion.empty() ? 0 : max_cluster + 1;
  return nu;
}

/// CSV export: excursion, weight, u_1..u_d.
inline void write_cloud_csv(const PointCloudMeasure& nu, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  out << "excursion,weight";
  for (int k = 0; k < nu.dim; ++k) out << ",u" << k + 1;
  out << "\n";
  char buf[40];
  for (std::size_t i = 0; i < nu.size(); ++i) {
    out << nu.excursion[i];
    std::snprintf(buf, sizeof buf, ",%.17g", nu.weights[i]);
    out << buf;
    for (double v : nu.point(i)) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace critaffine

#endif  // CRITAFFINE_NUPC_IO_HPP
