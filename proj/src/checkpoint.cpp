#include "weakenlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace weakenlab {

namespace {

template <class T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_parameters(std::ostream& out, const std::vector<NamedParameter>& params) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& p : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw CheckpointError("failed to write checkpoint");
}

std::vector<NamedParameter> read_parameters(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint: bad magic");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<NamedParameter> params;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = get_le<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw CheckpointError("checkpoint truncated in parameter name");
    const auto rank = get_le<std::uint32_t>(in, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint32_t>(in, "dims");
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in, "data"));
    params.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return params;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_parameters(out, model.parameters());
}

void load_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const auto loaded = read_parameters(in);
  auto& params = model.parameters();
  if (loaded.size() != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(loaded.size()) + " parameters, model has " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (loaded[i].name != params[i].name || loaded[i].value.shape() != params[i].value.shape()) {
      throw CheckpointError("checkpoint parameter " + loaded[i].name + shape_str(loaded[i].value.shape()) +
                            " does not match model parameter " + params[i].name +
                            shape_str(params[i].value.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].value.mutable_data();
    const auto src = loaded[i].value.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace weakenlab
