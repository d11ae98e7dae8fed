#include "msw/nifti.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

namespace msw {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;  // header + 4-byte extender
constexpr int16_t kDtFloat32 = 16;

struct HeaderBuf {
  char b[kHeaderSize] = {};
  template <class T>
  void put(int offset, T value) {
    std::memcpy(b + offset, &value, sizeof(T));
  }
  template <class T>
  T get(int offset) const {
    T value;
    std::memcpy(&value, b + offset, sizeof(T));
    return value;
  }
};

}  // namespace

void write_nifti(const std::string& path, const Volume& vol) {
  HeaderBuf h;
  h.put<int32_t>(0, kHeaderSize);
  const int16_t ndim = vol.nt > 1 ? 4 : 3;
  h.put<int16_t>(40, ndim);
  h.put<int16_t>(42, static_cast<int16_t>(vol.nx));
  h.put<int16_t>(44, static_cast<int16_t>(vol.ny));
  h.put<int16_t>(46, static_cast<int16_t>(vol.nz));
  h.put<int16_t>(48, static_cast<int16_t>(vol.nt));
  for (int d = 5; d < 8; ++d) h.put<int16_t>(40 + 2 * d, 1);
  h.put<int16_t>(70, kDtFloat32);
  h.put<int16_t>(72, 32);  // bitpix
  h.put<float>(76, 1.f);   // pixdim[0]
  h.put<float>(80, vol.dx);
  h.put<float>(84, vol.dy);
  h.put<float>(88, vol.dz);
  h.put<float>(92, 1.f);  // pixdim[4]
  h.put<float>(108, static_cast<float>(kVoxOffset));
  h.put<float>(112, 1.f);  // scl_slope
  h.put<char>(123, 10);    // xyzt_units: mm | sec
  const char descrip[] = "microswin";
  std::memcpy(h.b + 148, descrip, sizeof(descrip));
  h.put<int16_t>(252, 0);  // qform unused
  h.put<int16_t>(254, 1);  // sform: scaled identity in phantom-native space
  h.put<float>(280, vol.dx);
  h.put<float>(300, vol.dy);
  h.put<float>(320, vol.dz);
  const char magic[4] = {'n', '+', '1', '\0'};
  std::memcpy(h.b + 344, magic, 4);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(cat("cannot open '", path, "' for writing"));
  out.write(h.b, kHeaderSize);
  const char extender[4] = {0, 0, 0, 0};
  out.write(extender, 4);
  out.write(reinterpret_cast<const char*>(vol.v.data()),
            static_cast<std::streamsize>(vol.v.size() * sizeof(float)));
  if (!out) throw IoError(cat("write failed for '", path, "'"));
}

Volume read_nifti(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat("cannot open '", path, "'"));
  HeaderBuf h;
  in.read(h.b, kHeaderSize);
  if (!in) throw IoError(cat("'", path, "' is too short for a NIfTI-1 header"));
  if (h.get<int32_t>(0) != kHeaderSize)
    throw IoError(cat("'", path, "': bad sizeof_hdr (big-endian or non-NIfTI file?)"));
  if (std::memcmp(h.b + 344, "n+1", 3) != 0)
    throw IoError(cat("'", path, "': not a single-file NIfTI-1 (magic mismatch)"));
  if (h.get<int16_t>(70) != kDtFloat32)
    throw IoError(cat("'", path, "': unsupported datatype ", h.get<int16_t>(70), " (only float32)"));
  const int ndim = h.get<int16_t>(40);
  if (ndim < 3 || ndim > 4) throw IoError(cat("'", path, "': unsupported rank ", ndim));

  Volume vol(h.get<int16_t>(42), h.get<int16_t>(44), h.get<int16_t>(46),
             ndim == 4 ? h.get<int16_t>(48) : 1);
  vol.dx = h.get<float>(80);
  vol.dy = h.get<float>(84);
  vol.dz = h.get<float>(88);
  const auto vox_offset = static_cast<std::streamoff>(h.get<float>(108));
  in.seekg(vox_offset);
  in.read(reinterpret_cast<char*>(vol.v.data()), static_cast<std::streamsize>(vol.v.size() * sizeof(float)));
  if (!in) throw IoError(cat("'", path, "': truncated voxel data"));
  return vol;
}

}  // namespace msw
