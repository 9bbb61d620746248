#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "avh/error.hpp"

namespace avh {

/// Row-major float32 tensor as stored in an archive.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const;
};

std::string shape_string(const std::vector<std::int64_t>& shape);

/// Named tensors plus free-form metadata. On disk an archive is a JSON manifest
///   {"format": "avh-tensor-archive", "version": 1, "dtype": "f32", "blob": "<file>",
///    "tensors": [{"name", "dtype", "shape", "byte_offset", "byte_length"}...],
///    "metadata": {...}}
/// next to a single little-endian raw blob holding every tensor row-major,
/// in manifest order (sorted by name).
class TensorArchive {
 public:
  static constexpr int kFormatVersion = 1;

  void put(const std::string& name, Tensor tensor);

  template <typename Derived>
  void put_matrix(const std::string& name, const Eigen::DenseBase<Derived>& m) {
    Tensor t;
    t.shape = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
    t.data.resize(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) t.data[k++] = static_cast<float>(m(r, c));
    put(name, std::move(t));
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  /// Throws ArchiveError naming the tensor when absent.
  const Tensor& at(const std::string& name) const;

  /// Throws ArchiveError naming the tensor and both shapes on mismatch.
  const Tensor& expect(const std::string& name, const std::vector<std::int64_t>& shape) const;

  template <typename Scalar>
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> matrix(const std::string& name) const {
    const Tensor& t = at(name);
    if (t.shape.size() != 2)
      throw ArchiveError("tensor '" + name + "' is not 2-D: " + shape_string(t.shape));
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(t.shape[0], t.shape[1]);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(t.data[k++]);
    return m;
  }

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

 private:
  std::map<std::string, Tensor> tensors_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

/// Blob path paired with a manifest path: "x.json" -> "x.bin".
std::filesystem::path blob_path_for(const std::filesystem::path& manifest);

void save_archive(const TensorArchive& archive, const std::filesystem::path& manifest);
TensorArchive load_archive(const std::filesystem::path& manifest);

}  // namespace avh
