#include "difaug/params.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace difaug {

static_assert(std::endian::native == std::endian::little,
              "parameter container I/O assumes a little-endian host");

namespace {

template <typename T>
constexpr std::string_view precision_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

template <typename S, typename T>
void read_values(const std::vector<char>& bytes, std::size_t offset, Tensor<T>& out,
                 const std::filesystem::path& path) {
  const std::size_t need = out.numel() * sizeof(S);
  if (offset + need > bytes.size()) {
    throw ParseError(path.string() + ": payload truncated at byte offset " +
                     std::to_string(bytes.size()));
  }
  for (std::size_t i = 0; i < out.numel(); ++i) {
    S v;
    std::memcpy(&v, bytes.data() + offset + i * sizeof(S), sizeof(S));
    out[i] = static_cast<T>(v);
  }
}

}  // namespace

template <typename T>
void save_params(const std::filesystem::path& path, const ParamSet<T>& params,
                 const nlohmann::json& metadata) {
  nlohmann::json header;
  header["version"] = kParamsFormatVersion;
  header["precision"] = precision_name<T>();
  header["endianness"] = "little";
  header["metadata"] = metadata;
  nlohmann::json registry = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    registry.push_back(
        {{"name", params.name(i)}, {"shape", params[i].shape()}, {"offset", offset}});
    offset += params[i].numel();
  }
  header["tensors"] = registry;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto data = params[i].data();
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(T)));
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

template <typename T>
LoadedParams<T> load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
  std::uint64_t len = 0;
  if (bytes.size() < sizeof len) {
    throw ParseError(path.string() + ": missing header length at byte offset 0");
  }
  std::memcpy(&len, bytes.data(), sizeof len);
  if (len > bytes.size() - sizeof len) {
    throw ParseError(path.string() + ": header length " + std::to_string(len) +
                     " exceeds file size");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + sizeof len,
                                   bytes.begin() + static_cast<std::ptrdiff_t>(sizeof len + len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad JSON header: " + e.what());
  }
  if (header.value("version", "") != kParamsFormatVersion) {
    throw ParseError(path.string() + ": unsupported container version");
  }
  if (header.value("endianness", "") != "little") {
    throw ParseError(path.string() + ": only little-endian containers are supported");
  }
  const std::string precision = header.value("precision", "");
  if (precision != "float32" && precision != "float64") {
    throw ParseError(path.string() + ": unknown precision '" + precision + "'");
  }
  const std::size_t elem = precision == "float32" ? 4 : 8;
  const std::size_t base = sizeof len + len;

  LoadedParams<T> out;
  out.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    Tensor<T> t(entry.at("shape").get<Shape>());
    const std::size_t offset = base + entry.at("offset").get<std::size_t>() * elem;
    if (elem == 4) {
      read_values<float>(bytes, offset, t, path);
    } else {
      read_values<double>(bytes, offset, t, path);
    }
    out.params.add(entry.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

template void save_params<float>(const std::filesystem::path&, const ParamSet<float>&,
                                 const nlohmann::json&);
template void save_params<double>(const std::filesystem::path&, const ParamSet<double>&,
                                  const nlohmann::json&);
template LoadedParams<float> load_params<float>(const std::filesystem::path&);
template LoadedParams<double> load_params<double>(const std::filesystem::path&);

}  // namespace difaug
