#include "msjudge/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace msjudge {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  if (!value.requires_grad()) value = Tensor::from(value.shape(), {value.data().begin(), value.data().end()}, true);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(value));
  return tensors_.back();
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return tensors_[it->second];
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return tensors_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_)
    for (double g : t.grad()) s += g * g;
  return std::sqrt(s);
}

double ParamStore::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (std::isfinite(norm) && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& t : tensors_)
      for (double& g : t.mutable_grad()) g *= factor;
  }
  return norm;
}

void ParamStore::assign_values(const ParamStore& other) {
  if (other.names_ != names_) throw ContractError("assign_values: parameter sets differ");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].shape() != other.tensors_[i].shape())
      throw DimensionError("assign_values: " + names_[i] + " has shape " + shape_string(tensors_[i].shape()) +
                           ", source " + shape_string(other.tensors_[i].shape()));
    std::ranges::copy(other.tensors_[i].data(), tensors_[i].mutable_data().begin());
  }
}

std::uint64_t ParamStore::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    mix(names_[i].data(), names_[i].size());
    for (std::size_t d : tensors_[i].shape()) {
      const std::uint64_t v = d;
      mix(&v, sizeof v);
    }
    mix(tensors_[i].data().data(), tensors_[i].size() * sizeof(double));
  }
  return h;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

Tensor fan_in_tensor(Shape shape, std::size_t fan_in, Rng& rng) {
  return uniform_tensor(std::move(shape), 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1))), rng);
}

void adam_step(ParamStore& params, AdamState& state) {
  auto& tensors = params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i)
    for (double g : tensors[i].grad())
      if (!std::isfinite(g))
        throw DivergenceError("adam_step: non-finite gradient in parameter '" + params.names()[i] + "'");

  if (state.first_moment.size() != tensors.size()) {
    state.first_moment.assign(tensors.size(), {});
    state.second_moment.assign(tensors.size(), {});
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      state.first_moment[i].assign(tensors[i].size(), 0.0);
      state.second_moment[i].assign(tensors[i].size(), 0.0);
    }
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto value = tensors[i].mutable_data();
    auto grad = tensors[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != value.size())
      throw DimensionError("adam_step: moment size mismatch for '" + params.names()[i] + "'");
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * grad[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * grad[j] * grad[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      value[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

// --- checkpoint ----------------------------------------------------------------
//
// Layout (little-endian):
//   "MSJCKPT\0"  u32 version  u64 metadata_len  metadata bytes
//   u64 tensor_count, then per tensor:
//   u64 name_len  name  u64 rank  u64 dims[rank]  f64 values[prod(dims)]

namespace {

constexpr char kMagic[8] = {'M', 'S', 'J', 'C', 'K', 'P', 'T', '\0'};
static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw ValidationError("checkpoint " + path.string() + ": truncated");
  return v;
}

std::string take_string(std::istream& is, const std::filesystem::path& path) {
  const auto n = take<std::uint64_t>(is, path);
  if (n > (1ULL << 32)) throw ValidationError("checkpoint " + path.string() + ": implausible string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n)))
    throw ValidationError("checkpoint " + path.string() + ": truncated");
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (ckpt.names.size() != ckpt.tensors.size()) throw ContractError("checkpoint: names/tensors length mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  put(os, ckpt.version);
  put<std::uint64_t>(os, ckpt.metadata.size());
  os.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
  put<std::uint64_t>(os, ckpt.tensors.size());
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const auto& t = ckpt.tensors[i];
    put<std::uint64_t>(os, ckpt.names[i].size());
    os.write(ckpt.names[i].data(), static_cast<std::streamsize>(ckpt.names[i].size()));
    put<std::uint64_t>(os, t.rank());
    for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw ValidationError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ValidationError(path.string() + " is not a checkpoint file");
  Checkpoint ckpt;
  ckpt.version = take<std::uint32_t>(is, path);
  if (ckpt.version != kCheckpointVersion)
    throw ValidationError("checkpoint " + path.string() + ": unsupported format version " + std::to_string(ckpt.version));
  ckpt.metadata = take_string(is, path);
  const auto count = take<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    ckpt.names.push_back(take_string(is, path));
    const auto rank = take<std::uint64_t>(is, path);
    if (rank > 8) throw ValidationError("checkpoint " + path.string() + ": implausible rank for " + ckpt.names.back());
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(take<std::uint64_t>(is, path));
    std::vector<double> values(shape_size(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double))))
      throw ValidationError("checkpoint " + path.string() + ": truncated tensor " + ckpt.names.back());
    ckpt.tensors.push_back(Tensor::from(std::move(shape), std::move(values), true));
  }
  return ckpt;
}

}  // namespace msjudge
