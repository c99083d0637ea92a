#pragma once

// Named trainable arrays and the on-disk named-array archive.
//
// Archive layout (all integers little-endian):
//   bytes 0..7   magic "MGNLIARC"
//   bytes 8..11  uint32 format version (1)
//   bytes 12..19 uint64 manifest length M
//   next M bytes UTF-8 JSON manifest:
//       {"arrays": [{"name", "shape": [rows, cols], "dtype": "float64"|"float32",
//                    "offset", "nbytes"}...],
//        "meta": {...}}
//   remainder    raw array payload; offsets are relative to its start
//
// Arrays are stored row-major. Weight matrices use the (in, out) convention,
// i.e. a layer computes x * W + b for row vectors x.

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgnli/tensor.hpp"

namespace mgnli {

class ParameterStore {
 public:
  ag::Var& add(const std::string& name, Mat value);
  const ag::Var& get(const std::string& name) const;
  ag::Var& get(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, ag::Var>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  bool all_finite() const;

  // Deep copy; the clone shares no nodes with the original.
  ParameterStore clone() const;
  // Copies values from another store with identical names and shapes.
  void assign_from(const ParameterStore& other);

 private:
  std::map<std::string, ag::Var> params_;
};

struct NamedArray {
  std::string name;
  Mat value;
};

struct Archive {
  std::vector<NamedArray> arrays;
  nlohmann::json meta = nlohmann::json::object();

  const NamedArray* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

// Helpers for stores: every parameter, optionally under a name prefix.
void append_to_archive(Archive& archive, const ParameterStore& store, const std::string& prefix = "");
// Loads every parameter of `store` from `archive` (names prefixed), checking
// shapes. Throws ImportError naming the first missing or mismatched array.
void load_from_archive(ParameterStore& store, const Archive& archive, const std::string& prefix = "");

// Initializers.
Mat normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);
Mat uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng);

}  // namespace mgnli
