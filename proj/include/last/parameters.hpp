#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace last {

/// Parameter groups of the detector. Every tensor belongs to exactly one group.
enum class Group : int {
  encoder = 0,        // per-frame CNN
  projection = 1,     // token projection W and positional embedding E_pos
  transformer = 2,    // transformer blocks
  reconstructor = 3,  // feature reconstructor R
  adaptive = 4,       // adaptive layer L_d
  classifier = 5,     // classification layer L_c
};

inline constexpr std::array<Group, 6> kAllGroups{Group::encoder,       Group::projection,
                                                 Group::transformer,   Group::reconstructor,
                                                 Group::adaptive,      Group::classifier};

std::string_view group_name(Group g);
Group parse_group(std::string_view name);

/// Training phase a checkpoint was produced by.
enum class Phase { init, pretrain, adapt };

std::string_view phase_name(Phase p);
Phase parse_phase(std::string_view name);

/// Groups optimized in a phase: the backbone during pretraining, only the two
/// heads during adaptation. Throws for Phase::init, which trains nothing.
std::vector<Group> trainable_groups(Phase p);
bool is_trainable(Group g, Phase p);

/// Tensor storage is aligned like Eigen's own buffers, so vectorized kernels
/// see the same memory layout on every run and results are bit-reproducible.
template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

template <typename S>
struct Tensor {
  Group group;
  std::string name;
  std::vector<int> shape;
  AlignedVector<S> data;

  std::size_t size() const { return data.size(); }
  std::string qualified_name() const { return std::string(group_name(group)) + "/" + name; }
};

/// Ordered collection of named tensors, partitioned by Group.
template <typename S>
class ParameterStore {
 public:
  std::size_t add(Group group, std::string name, std::vector<int> shape);

  Tensor<S>& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor<S>& operator[](std::size_t i) const { return tensors_[i]; }
  std::size_t size() const { return tensors_.size(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  std::optional<std::size_t> find(Group group, std::string_view name) const;

  /// Number of scalars in one group.
  std::size_t count(Group group) const;
  std::size_t count(const std::vector<Group>& groups) const;

  ParameterStore zeros_like() const;
  void set_zero();

  template <typename T>
  ParameterStore<T> cast() const {
    ParameterStore<T> out;
    for (const auto& t : tensors_) {
      std::size_t i = out.add(t.group, t.name, t.shape);
      for (std::size_t k = 0; k < t.data.size(); ++k) out[i].data[k] = static_cast<T>(t.data[k]);
    }
    return out;
  }

 private:
  std::vector<Tensor<S>> tensors_;
};

/// Qualified names (`group/tensor`) of everything trainable in `phase`.
template <typename S>
std::vector<std::string> trainable_parameters(const ParameterStore<S>& store, Phase phase);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace last
