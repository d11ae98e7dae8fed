#include "msw/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "msw/common.hpp"

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace msw {

namespace {
constexpr char kMagic[8] = {'M', 'S', 'W', 'A', 'R', 'C', 'H', '1'};
}

void WeightArchive::put(const std::string& name, const Array<float>& a) {
  Entry e;
  e.dtype = "f32";
  e.shape = a.shape;
  e.f32 = a.v;
  entries_[name] = std::move(e);
}

void WeightArchive::put(const std::string& name, const Array<double>& a) {
  Entry e;
  e.dtype = "f64";
  e.shape = a.shape;
  e.f64 = a.v;
  entries_[name] = std::move(e);
}

const WeightArchive::Entry& WeightArchive::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IoError(cat("archive has no tensor named '", name, "'"));
  return it->second;
}

Array<float> WeightArchive::get_f32(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != "f32") throw IoError(cat("tensor '", name, "' has dtype ", e.dtype, ", expected f32"));
  return Array<float>(e.shape, e.f32);
}

Array<double> WeightArchive::get_f64(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != "f64") throw IoError(cat("tensor '", name, "' has dtype ", e.dtype, ", expected f64"));
  return Array<double>(e.shape, e.f64);
}

std::vector<std::string> WeightArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

void WeightArchive::save(const std::string& path) const {
  nlohmann::json header;
  header["meta"] = meta.is_null() ? nlohmann::json::object() : meta;
  nlohmann::json tensors = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    const uint64_t nbytes =
        e.dtype == "f32" ? e.f32.size() * sizeof(float) : e.f64.size() * sizeof(double);
    tensors.push_back({{"name", name}, {"dtype", e.dtype}, {"shape", e.shape}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  header["tensors"] = std::move(tensors);
  const std::string hs = header.dump();
  if (hs.size() > 0xFFFFFFFFull) throw IoError("archive header too large");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(cat("cannot open '", path, "' for writing"));
  out.write(kMagic, 8);
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, e] : entries_) {
    if (e.dtype == "f32")
      out.write(reinterpret_cast<const char*>(e.f32.data()), static_cast<std::streamsize>(e.f32.size() * sizeof(float)));
    else
      out.write(reinterpret_cast<const char*>(e.f64.data()), static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
  }
  if (!out) throw IoError(cat("write failed for '", path, "'"));
}

WeightArchive WeightArchive::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat("cannot open '", path, "'"));
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError(cat("'", path, "' is not a weight archive (bad magic)"));
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 4);
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw IoError(cat("truncated archive header in '", path, "'"));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(cat("corrupt archive header in '", path, "': ", e.what()));
  }
  const std::streampos data_start = in.tellg();

  WeightArchive arch;
  arch.meta = header.value("meta", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    Entry e;
    e.dtype = t.at("dtype").get<std::string>();
    e.shape = t.at("shape").get<Shape>();
    const uint64_t offset = t.at("offset").get<uint64_t>();
    const uint64_t nbytes = t.at("nbytes").get<uint64_t>();
    const int64_t n = numel(e.shape);
    in.seekg(data_start + static_cast<std::streamoff>(offset));
    if (e.dtype == "f32") {
      if (nbytes != static_cast<uint64_t>(n) * sizeof(float))
        throw IoError(cat("size mismatch for tensor '", t.at("name").get<std::string>(), "'"));
      e.f32.resize(static_cast<size_t>(n));
      in.read(reinterpret_cast<char*>(e.f32.data()), static_cast<std::streamsize>(nbytes));
    } else if (e.dtype == "f64") {
      if (nbytes != static_cast<uint64_t>(n) * sizeof(double))
        throw IoError(cat("size mismatch for tensor '", t.at("name").get<std::string>(), "'"));
      e.f64.resize(static_cast<size_t>(n));
      in.read(reinterpret_cast<char*>(e.f64.data()), static_cast<std::streamsize>(nbytes));
    } else {
      throw IoError(cat("unknown dtype '", e.dtype, "' in archive"));
    }
    if (!in) throw IoError(cat("truncated tensor data in '", path, "'"));
    arch.entries_[t.at("name").get<std::string>()] = std::move(e);
  }
  return arch;
}

}  // namespace msw
