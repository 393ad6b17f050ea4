#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "msjudge/tensor.hpp"

namespace msjudge {

/// Named learnable tensors in registration order.
class ParamStore {
 public:
  /// Registers a new trainable tensor; names must be unique.
  Tensor& add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  /// Total number of scalar parameters.
  std::size_t scalar_count() const;
  void zero_grad();
  double grad_norm() const;
  /// Rescales all gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
  double clip_grad_norm(double max_norm);

  /// Copies values from `other` (same names and shapes).
  void assign_values(const ParamStore& other);

  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Initialization helpers; all draw from the given generator in element order.
Tensor uniform_tensor(Shape shape, double bound, Rng& rng);
/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
Tensor fan_in_tensor(Shape shape, std::size_t fan_in, Rng& rng);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update over every tensor in `params`, using their
/// accumulated gradients. Throws DivergenceError (naming the tensor) without
/// touching any parameter if a gradient is non-finite.
void adam_step(ParamStore& params, AdamState& state);

// --- checkpoint container ---------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string metadata;  // JSON document: model config + vocabulary
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace msjudge
