#include "dtgan/neural.hpp"

#include <cstring>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace dtgan::neural {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu_0.2";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu_0.2") return Activation::leaky_relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw DataError("unknown activation: " + name);
}

namespace {

constexpr char kMagic[4] = {'D', 'N', 'E', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
               static_cast<char>(v >> 24)};
  out.write(b, 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
  out.write(b, 8);
}

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("truncated network container");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw DataError("truncated network container");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

template <typename Scalar>
const char* dtype_tag();
template <>
const char* dtype_tag<float>() {
  return "f32";
}
template <>
const char* dtype_tag<double>() {
  return "f64";
}

template <typename Scalar>
void write_scalar(std::ostream& out, Scalar v) {
  if constexpr (sizeof(Scalar) == 4) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
  } else {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
  }
}

template <typename Scalar>
Scalar read_scalar(std::istream& in) {
  Scalar v;
  if constexpr (sizeof(Scalar) == 4) {
    uint32_t bits = read_u32(in);
    std::memcpy(&v, &bits, 4);
  } else {
    uint64_t bits = read_u64(in);
    std::memcpy(&v, &bits, 8);
  }
  return v;
}

}  // namespace

template <typename Scalar>
void DenseNet<Scalar>::save(std::ostream& out) const {
  nlohmann::json header;
  header["dims"] = dims_;
  std::vector<std::string> act_names;
  for (Activation a : acts_) act_names.push_back(activation_name(a));
  header["activations"] = act_names;
  header["dtype"] = dtype_tag<Scalar>();
  header["param_count"] = static_cast<uint64_t>(params_.size());
  std::string header_str = header.dump();

  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u64(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (Eigen::Index i = 0; i < params_.size(); ++i) write_scalar<Scalar>(out, params_[i]);
  if (!out) throw DataError("network write failed");
}

template <typename Scalar>
DenseNet<Scalar> DenseNet<Scalar>::load(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("bad network container magic");
  uint32_t version = read_u32(in);
  if (version != kVersion) throw DataError("unsupported network container version");
  uint64_t header_len = read_u64(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("truncated network container");
  nlohmann::json header = nlohmann::json::parse(header_str);

  if (header.at("dtype").get<std::string>() != dtype_tag<Scalar>()) {
    throw DataError("network container dtype mismatch");
  }
  std::vector<int> dims = header.at("dims").get<std::vector<int>>();
  std::vector<Activation> acts;
  for (const auto& name : header.at("activations")) {
    acts.push_back(activation_from_name(name.get<std::string>()));
  }
  DenseNet<Scalar> net(std::move(dims), std::move(acts));
  auto count = header.at("param_count").get<uint64_t>();
  if (count != static_cast<uint64_t>(net.param_count())) {
    throw DataError("network container parameter count mismatch");
  }
  for (Eigen::Index i = 0; i < net.param_count(); ++i) {
    net.params()[i] = read_scalar<Scalar>(in);
  }
  return net;
}

template class DenseNet<float>;
template class DenseNet<double>;

}  // namespace dtgan::neural
