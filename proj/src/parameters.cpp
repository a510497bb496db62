#include "last/parameters.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace last {

std::string_view group_name(Group g) {
  switch (g) {
    case Group::encoder: return "encoder";
    case Group::projection: return "projection";
    case Group::transformer: return "transformer";
    case Group::reconstructor: return "reconstructor";
    case Group::adaptive: return "adaptive";
    case Group::classifier: return "classifier";
  }
  throw std::invalid_argument("unknown parameter group");
}

Group parse_group(std::string_view name) {
  for (Group g : kAllGroups)
    if (group_name(g) == name) return g;
  throw std::invalid_argument("unknown parameter group: " + std::string(name));
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::init: return "init";
    case Phase::pretrain: return "pretrain";
    case Phase::adapt: return "adapt";
  }
  throw std::invalid_argument("unknown phase");
}

Phase parse_phase(std::string_view name) {
  if (name == "init") return Phase::init;
  if (name == "pretrain") return Phase::pretrain;
  if (name == "adapt") return Phase::adapt;
  throw std::invalid_argument("unknown phase: " + std::string(name));
}

std::vector<Group> trainable_groups(Phase p) {
  switch (p) {
    case Phase::pretrain:
      return {Group::encoder, Group::projection, Group::transformer, Group::reconstructor};
    case Phase::adapt:
      return {Group::adaptive, Group::classifier};
    case Phase::init:
      break;
  }
  throw std::invalid_argument("phase '" + std::string(phase_name(p)) + "' has no trainable set");
}

bool is_trainable(Group g, Phase p) {
  auto groups = trainable_groups(p);
  return std::find(groups.begin(), groups.end(), g) != groups.end();
}

template <typename S>
std::size_t ParameterStore<S>::add(Group group, std::string name, std::vector<int> shape) {
  if (find(group, name)) throw std::invalid_argument("duplicate parameter " + name);
  std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                  [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  tensors_.push_back(Tensor<S>{group, std::move(name), std::move(shape), AlignedVector<S>(n, S(0))});
  return tensors_.size() - 1;
}

template <typename S>
std::optional<std::size_t> ParameterStore<S>::find(Group group, std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].group == group && tensors_[i].name == name) return i;
  return std::nullopt;
}

template <typename S>
std::size_t ParameterStore<S>::count(Group group) const {
  std::size_t n = 0;
  for (const auto& t : tensors_)
    if (t.group == group) n += t.size();
  return n;
}

template <typename S>
std::size_t ParameterStore<S>::count(const std::vector<Group>& groups) const {
  std::size_t n = 0;
  for (Group g : groups) n += count(g);
  return n;
}

template <typename S>
ParameterStore<S> ParameterStore<S>::zeros_like() const {
  ParameterStore out;
  for (const auto& t : tensors_) out.add(t.group, t.name, t.shape);
  return out;
}

template <typename S>
void ParameterStore<S>::set_zero() {
  for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), S(0));
}

template <typename S>
std::vector<std::string> trainable_parameters(const ParameterStore<S>& store, Phase phase) {
  std::vector<std::string> names;
  for (const auto& t : store)
    if (is_trainable(t.group, phase)) names.push_back(t.qualified_name());
  return names;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template std::vector<std::string> trainable_parameters(const ParameterStore<float>&, Phase);
template std::vector<std::string> trainable_parameters(const ParameterStore<double>&, Phase);

}  // namespace last
