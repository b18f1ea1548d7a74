#pragma once

// Portable on-disk formats.
//
//   <dir>/series.meta      key=value descriptor (one key per line, '#' comments)
//   <dir>/<name>_t<k>.f32  raw little-endian float32 volume for timestamp k
//   <dir>/<name>_vfa<k>.f32  optional pre-contrast volume at flip_angles_deg[k]
//   <file>.mask            "dims=nx,ny,nz\n" then one byte (0/1) per voxel
//   <file>.pmap            "dcekit-pmap 1 dims=nx,ny,nz\n" then per voxel
//                          ktrans, ve, kep, mse as float64 LE plus one flag byte
//
// Descriptor keys: name, dims, spacing_mm, timestamps_s, tr_s, flip_angles_deg,
// r1, htc and the optional t10_s (uniform pre-contrast T10 used when no VFA
// volumes are present).

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dcekit/error.hpp"
#include "dcekit/volume.hpp"

namespace dcekit {

namespace fs = std::filesystem;

/// Everything stored in one series directory.
struct Study {
  std::string name = "vol";
  TimeSeries series;
  AcquisitionParams acq;
  std::vector<Volume3D> vfa;  // empty, or one volume per flip angle
  std::optional<double> t10_s;
};

namespace io_detail {

template <class T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

template <class T>
void write_le(std::ostream& os, T v) {
  v = byteswap_if_big(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return byteswap_if_big(v);
}

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double parse_double(std::string_view s, const std::string& key) {
  auto t = trim(s);
  double v{};
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size())
    throw ValidationError("bad number '" + t + "' for key " + key);
  return v;
}

inline std::vector<double> parse_list(std::string_view s, const std::string& key) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto comma = s.find(',', start);
    auto part = s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    if (!trim(part).empty()) out.push_back(parse_double(part, key));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  return out;
}

inline Dims parse_dims(std::string_view s) {
  auto v = parse_list(s, "dims");
  if (v.size() != 3) throw ValidationError("dims needs three entries");
  for (double d : v)
    if (d < 1 || d != std::floor(d)) throw ValidationError("dims entries must be positive integers");
  return {static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2])};
}

inline std::string dims_text(const Dims& d) {
  return std::to_string(d.nx) + "," + std::to_string(d.ny) + "," + std::to_string(d.nz);
}

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + p.string());
  return os;
}

inline std::ifstream open_in(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot read " + p.string());
  return is;
}

}  // namespace io_detail

inline void write_volume_f32(const Volume3D& v, const fs::path& p) {
  auto os = io_detail::open_out(p);
  for (double x : v.data()) io_detail::write_le(os, static_cast<float>(x));
  if (!os) throw IoError("write failed: " + p.string());
}

inline Volume3D read_volume_f32(const fs::path& p, Dims dims, Spacing spacing) {
  std::error_code ec;
  auto bytes = fs::file_size(p, ec);
  if (ec) throw IoError("cannot read " + p.string());
  if (bytes != dims.count() * sizeof(float))
    throw ValidationError("dim mismatch: " + p.filename().string() + " holds " + std::to_string(bytes / 4) +
                          " voxels, descriptor says " + to_string(dims));
  auto is = io_detail::open_in(p);
  std::vector<double> data(dims.count());
  for (auto& x : data) x = io_detail::read_le<float>(is);
  if (!is) throw IoError("short read: " + p.string());
  for (double x : data)
    if (!std::isfinite(x)) throw ValidationError("non-finite values in " + p.filename().string());
  return Volume3D(dims, spacing, std::move(data));
}

inline std::map<std::string, std::string> read_descriptor(const fs::path& file) {
  if (!fs::exists(file)) throw IoError("missing descriptor " + file.string());
  auto is = io_detail::open_in(file);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    auto t = io_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) throw ValidationError("descriptor line without '=': " + t);
    kv[io_detail::trim(std::string_view(t).substr(0, eq))] = io_detail::trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

inline Study load_study(const fs::path& dir) {
  auto kv = read_descriptor(dir / "series.meta");
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ValidationError("descriptor missing key '" + key + "'");
    return it->second;
  };

  Study st;
  if (auto it = kv.find("name"); it != kv.end()) st.name = it->second;
  Dims dims = io_detail::parse_dims(need("dims"));
  Spacing spacing{};
  if (auto it = kv.find("spacing_mm"); it != kv.end()) {
    auto s = io_detail::parse_list(it->second, "spacing_mm");
    if (s.size() != 3) throw ValidationError("spacing_mm needs three entries");
    spacing = {s[0], s[1], s[2]};
  }
  auto times = io_detail::parse_list(need("timestamps_s"), "timestamps_s");
  if (times.empty()) throw ValidationError("timestamps_s is empty");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1])) throw ValidationError("non-increasing timestamps");

  if (auto it = kv.find("tr_s"); it != kv.end()) st.acq.tr_s = io_detail::parse_double(it->second, "tr_s");
  if (auto it = kv.find("flip_angles_deg"); it != kv.end())
    st.acq.flip_angles_deg = io_detail::parse_list(it->second, "flip_angles_deg");
  if (auto it = kv.find("r1"); it != kv.end()) st.acq.relaxivity_r1 = io_detail::parse_double(it->second, "r1");
  if (auto it = kv.find("htc"); it != kv.end()) st.acq.haematocrit = io_detail::parse_double(it->second, "htc");
  if (auto it = kv.find("t10_s"); it != kv.end()) st.t10_s = io_detail::parse_double(it->second, "t10_s");
  st.acq.validate();

  std::vector<Volume3D> vols;
  vols.reserve(times.size());
  for (std::size_t k = 0; k < times.size(); ++k)
    vols.push_back(read_volume_f32(dir / (st.name + "_t" + std::to_string(k) + ".f32"), dims, spacing));
  st.series = TimeSeries(std::move(vols), std::move(times));

  bool have_vfa = true;
  for (std::size_t k = 0; k < st.acq.flip_angles_deg.size(); ++k)
    have_vfa = have_vfa && fs::exists(dir / (st.name + "_vfa" + std::to_string(k) + ".f32"));
  if (have_vfa && st.acq.flip_angles_deg.size() >= 2) {
    for (std::size_t k = 0; k < st.acq.flip_angles_deg.size(); ++k)
      st.vfa.push_back(read_volume_f32(dir / (st.name + "_vfa" + std::to_string(k) + ".f32"), dims, spacing));
  }
  return st;
}

inline TimeSeries load_timeseries(const fs::path& dir) { return load_study(dir).series; }

inline void save_study(const Study& st, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  {
    auto os = io_detail::open_out(dir / "series.meta");
    std::vector<double> times(st.series.timestamps_s().begin(), st.series.timestamps_s().end());
    const auto& sp = st.series.spacing();
    os << "# dcekit series descriptor\n"
       << "name=" << st.name << '\n'
       << "dims=" << io_detail::dims_text(st.series.dims()) << '\n'
       << "spacing_mm=" << io_detail::join({sp.sx, sp.sy, sp.sz}) << '\n'
       << "timestamps_s=" << io_detail::join(times) << '\n'
       << "tr_s=" << io_detail::format_double(st.acq.tr_s) << '\n'
       << "flip_angles_deg=" << io_detail::join(st.acq.flip_angles_deg) << '\n'
       << "r1=" << io_detail::format_double(st.acq.relaxivity_r1) << '\n'
       << "htc=" << io_detail::format_double(st.acq.haematocrit) << '\n';
    if (st.t10_s) os << "t10_s=" << io_detail::format_double(*st.t10_s) << '\n';
    if (!os) throw IoError("write failed: series.meta");
  }
  for (std::size_t k = 0; k < st.series.size(); ++k)
    write_volume_f32(st.series[k], dir / (st.name + "_t" + std::to_string(k) + ".f32"));
  for (std::size_t k = 0; k < st.vfa.size(); ++k)
    write_volume_f32(st.vfa[k], dir / (st.name + "_vfa" + std::to_string(k) + ".f32"));
}

inline void save_mask(const VoxelMask& m, const fs::path& p) {
  auto os = io_detail::open_out(p);
  os << "dims=" << io_detail::dims_text(m.dims()) << '\n';
  os.write(reinterpret_cast<const char*>(m.bits().data()), static_cast<std::streamsize>(m.bits().size()));
  if (!os) throw IoError("write failed: " + p.string());
}

inline VoxelMask load_mask(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("missing mask file " + p.string());
  auto is = io_detail::open_in(p);
  std::string header;
  std::getline(is, header);
  if (header.rfind("dims=", 0) != 0) throw ValidationError("mask header must start with dims=");
  Dims dims = io_detail::parse_dims(std::string_view(header).substr(5));
  std::vector<std::uint8_t> bits(dims.count());
  is.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
  if (static_cast<std::size_t>(is.gcount()) != bits.size()) throw ValidationError("mask body shorter than dims");
  if (is.peek() != std::char_traits<char>::eof()) throw ValidationError("mask body longer than dims");
  for (auto b : bits)
    if (b > 1) throw ValidationError("mask bytes must be 0 or 1");
  return VoxelMask(dims, std::move(bits));
}

inline void save_parameter_map(const ParameterMap& map, const fs::path& p) {
  auto os = io_detail::open_out(p);
  os << "dcekit-pmap 1 dims=" << io_detail::dims_text(map.dims()) << '\n';
  for (const auto& v : map.voxels()) {
    io_detail::write_le(os, v.params.ktrans);
    io_detail::write_le(os, v.params.ve);
    io_detail::write_le(os, v.params.kep);
    io_detail::write_le(os, v.mse);
    io_detail::write_le(os, static_cast<std::uint8_t>(v.converged ? 1 : 0));
  }
  if (!os) throw IoError("write failed: " + p.string());
}

inline ParameterMap load_parameter_map(const fs::path& p) {
  auto is = io_detail::open_in(p);
  std::string header;
  std::getline(is, header);
  constexpr std::string_view magic = "dcekit-pmap 1 dims=";
  if (header.rfind(magic, 0) != 0) throw ValidationError("not a parameter map: " + p.string());
  ParameterMap map(io_detail::parse_dims(std::string_view(header).substr(magic.size())));
  for (std::size_t i = 0; i < map.size(); ++i) {
    auto& v = map[i];
    v.params.ktrans = io_detail::read_le<double>(is);
    v.params.ve = io_detail::read_le<double>(is);
    v.params.kep = io_detail::read_le<double>(is);
    v.mse = io_detail::read_le<double>(is);
    v.converged = io_detail::read_le<std::uint8_t>(is) != 0;
  }
  if (!is) throw ValidationError("truncated parameter map: " + p.string());
  return map;
}

}  // namespace dcekit
