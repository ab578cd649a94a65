#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sugar {

struct Tensor {
  std::vector<int> shape;  // {rows, cols} for weights, {n} for biases
  Eigen::MatrixXd value;   // biases are stored as 1 x n
};

/// Ordered name -> tensor map holding one base model's parameters. The name
/// set and shapes are fixed once construction finishes.
class ParamStore {
 public:
  /// Returns the index of the new tensor (zero-initialized).
  std::size_t add(const std::string& name, std::vector<int> shape);

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  /// Total scalar count across all tensors.
  std::size_t numel() const;

  /// FNV-1a over names and shapes, rendered as 16 hex digits.
  std::string fingerprint() const;

  ParamStore zeros_like() const;
  void set_zero();

  /// Flat copy in tensor order, each tensor column-major.
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);

  double& scalar(std::size_t flat_index);

  /// Rounds every value to the nearest float32.
  void round_to_float();

  /// this += alpha * other (same layout required).
  void axpy(double alpha, const ParamStore& other);

  bool same_layout(const ParamStore& other) const;
  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace sugar
