#include "mgnli/params.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "mgnli/error.hpp"

namespace mgnli {

namespace {

constexpr std::array<char, 8> kMagic{'M', 'G', 'N', 'L', 'I', 'A', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ImportError("archive truncated");
  return v;
}

}  // namespace

ag::Var& ParameterStore::add(const std::string& name, Mat value) {
  auto [it, inserted] = params_.emplace(name, ag::parameter(std::move(value)));
  if (!inserted) throw ConfigurationError("duplicate parameter name: " + name);
  return it->second;
}

const ag::Var& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigurationError("unknown parameter: " + name);
  return it->second;
}

ag::Var& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigurationError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += static_cast<std::size_t>(v->value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, v] : params_) v->zero_grad();
}

bool ParameterStore::all_finite() const {
  for (const auto& [_, v] : params_) {
    if (!v->value.allFinite()) return false;
  }
  return true;
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (const auto& [name, v] : params_) out.add(name, v->value);
  return out;
}

void ParameterStore::assign_from(const ParameterStore& other) {
  for (auto& [name, v] : params_) {
    const auto& src = other.get(name);
    if (src->rows() != v->rows() || src->cols() != v->cols()) {
      throw ConfigurationError("assign_from: shape mismatch for " + name);
    }
    v->value = src->value;
  }
}

const NamedArray* Archive::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json manifest;
  manifest["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : archive.arrays) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(a.value.size()) * sizeof(double);
    manifest["arrays"].push_back({{"name", a.name},
                                  {"shape", {a.value.rows(), a.value.cols()}},
                                  {"dtype", "float64"},
                                  {"offset", offset},
                                  {"nbytes", nbytes}});
    offset += nbytes;
  }
  manifest["meta"] = archive.meta;
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : archive.arrays) {
    out.write(reinterpret_cast<const char*>(a.value.data()),
              static_cast<std::streamsize>(a.value.size() * sizeof(double)));
  }
  if (!out) throw Error("write failed: " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImportError("cannot open archive: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ImportError("not a parameter archive: " + path.string());
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) throw ImportError("unsupported archive version " + std::to_string(version));
  const auto mlen = read_pod<std::uint64_t>(in);
  std::string text(mlen, '\0');
  in.read(text.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw ImportError("archive manifest truncated");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ImportError(std::string("archive manifest is not valid JSON: ") + e.what());
  }
  const std::streamoff payload_start = in.tellg();

  Archive archive;
  if (manifest.contains("meta")) archive.meta = manifest["meta"];
  for (const auto& entry : manifest.at("arrays")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    const auto dtype = entry.at("dtype").get<std::string>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    const std::size_t width = dtype == "float64" ? 8 : dtype == "float32" ? 4 : 0;
    if (width == 0) throw ImportError("array " + a.name + ": unsupported dtype " + dtype);
    if (nbytes != static_cast<std::uint64_t>(rows * cols) * width) {
      throw ImportError("array " + a.name + ": byte count does not match shape");
    }
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    a.value.resize(rows, cols);
    if (width == 8) {
      in.read(reinterpret_cast<char*>(a.value.data()), static_cast<std::streamsize>(nbytes));
    } else {
      std::vector<float> buf(static_cast<std::size_t>(rows * cols));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(nbytes));
      for (std::size_t i = 0; i < buf.size(); ++i) a.value.data()[i] = buf[i];
    }
    if (!in) throw ImportError("array " + a.name + ": payload truncated");
    archive.arrays.push_back(std::move(a));
  }
  return archive;
}

void append_to_archive(Archive& archive, const ParameterStore& store, const std::string& prefix) {
  for (const auto& [name, v] : store.items()) archive.arrays.push_back({prefix + name, v->value});
}

void load_from_archive(ParameterStore& store, const Archive& archive, const std::string& prefix) {
  for (auto& [name, v] : store.items()) {
    const NamedArray* a = archive.find(prefix + name);
    if (a == nullptr) throw ImportError("missing array: " + prefix + name);
    if (a->value.rows() != v->rows() || a->value.cols() != v->cols()) {
      throw ImportError("array " + prefix + name + ": expected shape " + std::to_string(v->rows()) + "x" +
                        std::to_string(v->cols()) + ", found " + std::to_string(a->value.rows()) + "x" +
                        std::to_string(a->value.cols()));
    }
    if (!a->value.allFinite()) throw ImportError("array " + prefix + name + ": non-finite values");
    v->value = a->value;
  }
}

Mat normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Mat uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace mgnli
