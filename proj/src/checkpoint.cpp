#include "advlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace advlab {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'A', 'D', 'V', 'L', 'A', 'B', 'C', 'K'};

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw FormatError("checkpoint: truncated file");
  return v;
}

std::string get_string(std::istream& is, std::size_t n) {
  if (n > (1u << 26)) throw FormatError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("checkpoint: truncated file");
  return s;
}

nlohmann::json layer_to_json(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> nlohmann::json {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, ConvLayer>) {
          return {{"type", "conv"},       {"in_channels", l.in_channels}, {"out_channels", l.out_channels},
                  {"kernel", l.kernel},   {"stride", l.stride},           {"padding", l.padding}};
        } else if constexpr (std::is_same_v<L, ReluLayer>) {
          return {{"type", "relu"}};
        } else {
          return {{"type", "linear"}, {"in_features", l.in_features}, {"out_features", l.out_features}};
        }
      },
      layer);
}

Layer layer_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "conv") {
    return ConvLayer{j.at("in_channels").get<std::size_t>(), j.at("out_channels").get<std::size_t>(),
                     j.at("kernel").get<std::size_t>(), j.at("stride").get<std::size_t>(),
                     j.at("padding").get<std::size_t>()};
  }
  if (type == "relu") return ReluLayer{};
  if (type == "linear") {
    return LinearLayer{j.at("in_features").get<std::size_t>(), j.at("out_features").get<std::size_t>()};
  }
  throw FormatError("checkpoint: unknown layer type '" + type + "'");
}

template <typename S, typename T>
void read_values(std::istream& is, Tensor<T>& dst) {
  std::vector<S> raw(dst.size());
  if (!raw.empty() && !is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(S)))) {
    throw FormatError("checkpoint: truncated parameter data");
  }
  for (std::size_t i = 0; i < raw.size(); ++i) dst[i] = static_cast<T>(raw[i]);
}

}  // namespace

std::string architecture_json(const std::vector<Layer>& layers, const Shape& input_shape, std::size_t num_classes) {
  nlohmann::json j;
  j["input_shape"] = input_shape;
  j["num_classes"] = num_classes;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : layers) j["layers"].push_back(layer_to_json(l));
  return j.dump();
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, sizeof(T));
  const auto arch = architecture_json(model.layers(), model.input_shape(), model.num_classes());
  put<std::uint64_t>(os, arch.size());
  os.write(arch.data(), static_cast<std::streamsize>(arch.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(p.value.data().data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(T)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw FormatError("checkpoint: bad magic in " + path.string());
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto width = get<std::uint32_t>(is);
  if (width != 4 && width != 8) throw FormatError("checkpoint: unsupported scalar width " + std::to_string(width));

  nlohmann::json arch;
  try {
    arch = nlohmann::json::parse(get_string(is, get<std::uint64_t>(is)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad architecture: ") + e.what());
  }
  std::vector<Layer> layers;
  Shape input_shape;
  std::size_t num_classes = 0;
  try {
    for (const auto& l : arch.at("layers")) layers.push_back(layer_from_json(l));
    input_shape = arch.at("input_shape").get<Shape>();
    num_classes = arch.at("num_classes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad architecture: ") + e.what());
  }
  Model<T> model(std::move(layers), std::move(input_shape), num_classes);

  const auto count = get<std::uint32_t>(is);
  if (count != model.params().size()) throw FormatError("checkpoint: parameter count does not match architecture");
  for (auto& p : model.params()) {
    const auto name = get_string(is, get<std::uint32_t>(is));
    if (name != p.name) throw FormatError("checkpoint: expected parameter '" + p.name + "', found '" + name + "'");
    Shape shape(get<std::uint32_t>(is));
    for (auto& d : shape) d = get<std::uint64_t>(is);
    if (shape != p.value.shape()) throw FormatError("checkpoint: shape mismatch for '" + name + "'");
    if (width == 4) {
      read_values<float>(is, p.value);
    } else {
      read_values<double>(is, p.value);
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return model;
}

template void save_checkpoint(const Model<float>&, const std::filesystem::path&);
template void save_checkpoint(const Model<double>&, const std::filesystem::path&);
template Model<float> load_checkpoint(const std::filesystem::path&);
template Model<double> load_checkpoint(const std::filesystem::path&);

}  // namespace advlab
