#include "sugar/param_store.hpp"

#include <cstdint>
#include <cstdio>

#include "sugar/error.hpp"

namespace sugar {

std::size_t ParamStore::add(const std::string& name, std::vector<int> shape) {
  if (index_.count(name)) throw Error(ErrorKind::InvalidConfig, "duplicate parameter " + name);
  if (shape.empty() || shape.size() > 2) throw Error(ErrorKind::ShapeMismatch, "tensors are 1-D or 2-D");
  const int rows = shape.size() == 2 ? shape[0] : 1;
  const int cols = shape.size() == 2 ? shape[1] : shape[0];
  Tensor t{std::move(shape), Eigen::MatrixXd::Zero(rows, cols)};
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(t));
  return tensors_.size() - 1;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::ShapeMismatch, "unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const { return tensors_[index_of(name)]; }
Tensor& ParamStore::at(const std::string& name) { return tensors_[index_of(name)]; }

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

std::string ParamStore::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    mix(names_[i].data(), names_[i].size());
    const char sep = '\0';
    mix(&sep, 1);
    for (int d : tensors_[i].shape) {
      const auto v = static_cast<std::int64_t>(d);
      mix(&v, sizeof v);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out = *this;
  out.set_zero();
  return out;
}

void ParamStore::set_zero() {
  for (auto& t : tensors_) t.value.setZero();
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(numel());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.value.data(), t.value.data() + t.value.size());
  return flat;
}

void ParamStore::unflatten(const std::vector<double>& flat) {
  if (flat.size() != numel()) throw Error(ErrorKind::ShapeMismatch, "flat parameter length mismatch");
  std::size_t pos = 0;
  for (auto& t : tensors_) {
    std::copy_n(flat.data() + pos, t.value.size(), t.value.data());
    pos += static_cast<std::size_t>(t.value.size());
  }
}

double& ParamStore::scalar(std::size_t flat_index) {
  for (auto& t : tensors_) {
    const auto n = static_cast<std::size_t>(t.value.size());
    if (flat_index < n) return t.value.data()[flat_index];
    flat_index -= n;
  }
  throw Error(ErrorKind::IndexOutOfRange, "flat parameter index out of range");
}

void ParamStore::round_to_float() {
  for (auto& t : tensors_) {
    t.value = t.value.cast<float>().cast<double>();
  }
}

void ParamStore::axpy(double alpha, const ParamStore& other) {
  if (!same_layout(other)) throw Error(ErrorKind::FingerprintMismatch, "parameter layouts differ");
  for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].value += alpha * other.tensors_[i].value;
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].shape != other.tensors_[i].shape) return false;
  }
  return true;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    if (a.tensors_[i].value != b.tensors_[i].value) return false;
  }
  return true;
}

}  // namespace sugar
