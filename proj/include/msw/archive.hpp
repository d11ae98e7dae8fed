#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "msw/array.hpp"

namespace msw {

// Named-tensor container used for checkpoints and externally converted
// pretrained weights. On disk: 8-byte magic, little-endian u32 header
// length, JSON header listing (name, dtype, shape, byte offset) and free
// meta, then the raw little-endian tensor data.
class WeightArchive {
 public:
  struct Entry {
    std::string dtype;  // "f32" | "f64"
    Shape shape;
    std::vector<float> f32;
    std::vector<double> f64;
  };

  void put(const std::string& name, const Array<float>& a);
  void put(const std::string& name, const Array<double>& a);
  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  const Entry& entry(const std::string& name) const;
  Array<float> get_f32(const std::string& name) const;
  Array<double> get_f64(const std::string& name) const;
  std::vector<std::string> names() const;
  size_t size() const { return entries_.size(); }

  nlohmann::json meta;

  void save(const std::string& path) const;
  static WeightArchive load(const std::string& path);

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace msw
