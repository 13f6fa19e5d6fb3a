#include "peftseg/params.hpp"

#include <ostream>
#include <random>

#include "peftseg/errors.hpp"

namespace peftseg {

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

ParameterStore::ParameterStore(bool materialize, std::uint64_t backbone_seed, std::uint64_t head_seed)
    : materialize_(materialize), backbone_seed_(backbone_seed), head_seed_(head_seed) {}

Tensor ParameterStore::create(const std::string& path, Shape shape, Init init, bool trainable, SeedDomain domain) {
  if (index_.count(path)) throw IntegrityError("duplicate parameter path: " + path);
  for (auto d : shape)
    if (d <= 0) throw ShapeError("parameter " + path + " has non-positive axis in " + shape_str(shape));
  Tensor t;
  if (materialize_) {
    std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
    const std::uint64_t base = domain == SeedDomain::backbone ? backbone_seed_ : head_seed_;
    std::mt19937_64 rng(base ^ fnv1a64(path));
    switch (init.kind) {
      case Init::Kind::zeros:
        break;
      case Init::Kind::ones:
        std::fill(values.begin(), values.end(), 1.0);
        break;
      case Init::Kind::normal: {
        std::normal_distribution<double> dist(0.0, init.param);
        for (auto& v : values) v = dist(rng);
        break;
      }
      case Init::Kind::uniform: {
        std::uniform_real_distribution<double> dist(-init.param, init.param);
        for (auto& v : values) v = dist(rng);
        break;
      }
    }
    t = Tensor::from_data(shape, std::move(values), trainable);
  }
  index_.emplace(path, params_.size());
  params_.push_back({path, std::move(shape), t, trainable});
  return t;
}

const Parameter& ParameterStore::at(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw IntegrityError("unknown parameter path: " + path);
  return params_[it->second];
}

Parameter& ParameterStore::at(const std::string& path) {
  auto it = index_.find(path);
  if (it == index_.end()) throw IntegrityError("unknown parameter path: " + path);
  return params_[it->second];
}

void ParameterStore::set_trainable(const std::string& path, bool trainable) {
  auto& p = at(path);
  p.trainable = trainable;
  if (p.tensor.defined()) p.tensor.set_requires_grad(trainable);
}

std::int64_t ParameterStore::total_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += shape_numel(p.shape);
  return n;
}

void ParameterStore::load_values(const ParameterStore& other) {
  for (auto& p : params_) {
    if (!other.contains(p.path) || !p.tensor.defined()) continue;
    const auto& src = other.at(p.path);
    if (src.shape != p.shape) throw ShapeError("load_values: " + p.path + " shape " + shape_str(src.shape) + " vs " + shape_str(p.shape));
    std::copy(src.tensor.data().begin(), src.tensor.data().end(), p.tensor.data().begin());
  }
}

TrainabilityPartition TrainabilityPartition::from_store(const ParameterStore& store) {
  TrainabilityPartition part;
  for (const auto& p : store.parameters()) (p.trainable ? part.trainable_ : part.frozen_).insert(p.path);
  return part;
}

void TrainabilityPartition::write_audit(std::ostream& os) const {
  for (const auto& p : trainable_) os << "trainable\t" << p << '\n';
  for (const auto& p : frozen_) os << "frozen\t" << p << '\n';
}

std::int64_t count_trainable(const TrainabilityPartition& partition, const ParameterStore& store) {
  std::int64_t n = 0;
  for (const auto& path : partition.trainable()) {
    if (!store.contains(path)) throw IntegrityError("partition names parameter absent from model: " + path);
    n += shape_numel(store.at(path).shape);
  }
  return n;
}

}  // namespace peftseg
