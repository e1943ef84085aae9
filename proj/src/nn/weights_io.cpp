#include "qus/nn/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "qus/errors.hpp"

namespace qus::nn {

namespace {

constexpr char kMagic[4] = {'Q', 'W', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "weight container assumes a little-endian host");

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated weight file: " + path);
  return v;
}

}  // namespace

void export_weights(const std::string& path, const ParamMap& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_pod(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, std::uint32_t{4});
    for (std::size_t d : {t.n, t.c, t.h, t.w})
      write_pod(os, static_cast<std::uint32_t>(d));
    std::vector<float> buf(t.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<float>(t.data[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw IoError("write failed: " + path);
}

ParamMap read_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a weight file: " + path);
  const auto count = read_pod<std::uint32_t>(is, path);
  ParamMap out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = read_pod<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("truncated weight file: " + path);
    const auto rank = read_pod<std::uint32_t>(is, path);
    if (rank == 0 || rank > 4)
      throw IoError("unsupported tensor rank in " + path);
    std::size_t dims[4] = {1, 1, 1, 1};
    // Ranks below 4 fill the trailing axes, keeping [n,c,h,w] semantics.
    for (std::uint32_t d = 0; d < rank; ++d)
      dims[4 - rank + d] = read_pod<std::uint32_t>(is, path);
    Tensor4 t(dims[0], dims[1], dims[2], dims[3]);
    std::vector<float> buf(t.size());
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw IoError("truncated weight file: " + path);
    for (std::size_t i = 0; i < buf.size(); ++i)
      t.data[i] = static_cast<double>(buf[i]);
    out[name] = std::move(t);
  }
  return out;
}

void import_weights(ParamMap& params, const std::string& path,
                    const std::map<std::string, std::string>& mapping) {
  if (mapping.empty()) return;
  const ParamMap file = read_weights(path);
  std::string offenders;
  auto flag = [&offenders](const std::string& name, const char* why) {
    if (!offenders.empty()) offenders += ", ";
    offenders += name + " (" + why + ")";
  };
  for (const auto& [src, dst] : mapping) {
    auto sit = file.find(src);
    if (sit == file.end()) {
      flag(src, "missing from file");
      continue;
    }
    auto dit = params.find(dst);
    if (dit == params.end()) {
      flag(dst, "no such parameter");
      continue;
    }
    if (!sit->second.same_shape(dit->second))
      flag(src + " -> " + dst, "shape mismatch");
  }
  if (!offenders.empty())
    throw ImportError("weight import failed: " + offenders);
  for (const auto& [src, dst] : mapping) params[dst] = file.at(src);
}

}  // namespace qus::nn
