#pragma once

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "peftseg/tensor.hpp"

namespace peftseg {

struct Init {
  enum class Kind { zeros, ones, normal, uniform };
  Kind kind = Kind::zeros;
  double param = 0.0;  // std for normal, bound for uniform

  static Init zeros() { return {Kind::zeros, 0.0}; }
  static Init ones() { return {Kind::ones, 0.0}; }
  static Init normal(double std) { return {Kind::normal, std}; }
  static Init uniform(double bound) { return {Kind::uniform, bound}; }
};

/// Which seed initialises a parameter: the frozen backbone is shared across
/// runs, everything trained comes from the run seed.
enum class SeedDomain { backbone, head };

struct Parameter {
  std::string path;
  Shape shape;
  Tensor tensor;  // undefined in shape-only stores
  bool trainable = false;
};

/// Ordered collection of named parameters.
///
/// A shape-only store records paths and shapes without allocating, which is
/// how full-size encoders are counted. Each parameter is drawn from its own
/// generator seeded by (domain seed, path), so adding modules never shifts the
/// values of existing ones.
class ParameterStore {
 public:
  explicit ParameterStore(bool materialize = true, std::uint64_t backbone_seed = 0, std::uint64_t head_seed = 0);

  Tensor create(const std::string& path, Shape shape, Init init, bool trainable, SeedDomain domain);

  bool materialized() const { return materialize_; }
  bool contains(const std::string& path) const { return index_.count(path) != 0; }
  const Parameter& at(const std::string& path) const;
  Parameter& at(const std::string& path);
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& parameters() { return params_; }

  void set_trainable(const std::string& path, bool trainable);
  std::int64_t total_count() const;

  /// Copies values from `other` for every path present in both stores.
  void load_values(const ParameterStore& other);

 private:
  bool materialize_;
  std::uint64_t backbone_seed_;
  std::uint64_t head_seed_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Disjoint split of every parameter path into trainable and frozen.
class TrainabilityPartition {
 public:
  TrainabilityPartition() = default;
  static TrainabilityPartition from_store(const ParameterStore& store);

  const std::set<std::string>& trainable() const { return trainable_; }
  const std::set<std::string>& frozen() const { return frozen_; }
  bool is_trainable(const std::string& path) const { return trainable_.count(path) != 0; }

  /// One "trainable\t<path>" or "frozen\t<path>" line per parameter.
  void write_audit(std::ostream& os) const;

 private:
  std::set<std::string> trainable_;
  std::set<std::string> frozen_;
};

/// Element count of all trainable parameters. Throws IntegrityError when the
/// partition names a path the store does not hold.
std::int64_t count_trainable(const TrainabilityPartition& partition, const ParameterStore& store);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t fnv1a64(const std::string& s);

}  // namespace peftseg
