#pragma once

// Versioned binary tensor container:
//   "F3VACKPT" | u32 version | u32 tensor count |
//   per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
//               row-major little-endian float32 data.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "f3va/errors.hpp"
#include "f3va/linalg.hpp"
#include "f3va/nn/parameter.hpp"

namespace f3va::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  bool operator==(const Tensor&) const = default;
};

std::string encode_checkpoint(const std::vector<Tensor>& tensors);
std::vector<Tensor> decode_checkpoint(const std::string& bytes);
void write_checkpoint(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_checkpoint(const std::filesystem::path& path);

const Tensor& find_tensor(const std::vector<Tensor>& tensors, const std::string& name);

template <typename Scalar>
Tensor to_tensor(const std::string& name, const Matrix<Scalar>& m) {
  Tensor t{name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.data.push_back(static_cast<float>(m(i, j)));
  return t;
}

template <typename Scalar>
Matrix<Scalar> from_tensor(const Tensor& t) {
  if (t.dims.size() != 2) throw DataError("checkpoint: tensor " + t.name + " is not rank 2");
  Matrix<Scalar> m(t.dims[0], t.dims[1]);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<Scalar>(t.data[k++]);
  return m;
}

template <typename Scalar>
void append_parameters(std::vector<Tensor>& out, const std::string& prefix, const ParameterRefs<Scalar>& params) {
  for (const auto* p : params) out.push_back(to_tensor(prefix + p->name, p->value));
}

template <typename Scalar>
void load_parameters(const std::vector<Tensor>& tensors, const std::string& prefix,
                     const ParameterRefs<Scalar>& params) {
  for (auto* p : params) {
    Matrix<Scalar> v = from_tensor<Scalar>(find_tensor(tensors, prefix + p->name));
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw DataError("checkpoint: shape mismatch for " + prefix + p->name);
    p->value = std::move(v);
    p->zero_grad();
  }
}

/// Small integer metadata stored as a float vector tensor.
Tensor int_tensor(const std::string& name, const std::vector<int>& values);
std::vector<int> tensor_ints(const Tensor& t);

}  // namespace f3va::nn
