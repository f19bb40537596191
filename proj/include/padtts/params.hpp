#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "padtts/tensor.hpp"

namespace padtts {

// A named learnable tensor. Frozen parameters do not track gradients and
// are never touched by an optimizer.
struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

// Ordered collection of parameters, keyed by dotted name ("style.W1").
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  // Registers a parameter; the returned tensor aliases stored storage.
  Tensor add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  // Scalar count, optionally restricted to names starting with prefix.
  std::size_t scalar_count(const std::string& prefix = "") const;

  void set_frozen(const std::string& name, bool frozen);
  // Freezes every parameter whose name starts with (or does not start with) prefix.
  void set_frozen_prefix(const std::string& prefix, bool frozen, bool invert = false);
  void zero_grad();

  // Copies values from other by name; shapes must match.
  void copy_values_from(const ParameterSet& other);

 private:
  std::vector<Parameter> items_;
  std::map<std::string, std::size_t> index_;
};

// Glorot-uniform initialized tensor.
Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Updates every non-frozen parameter from its gradient.
  virtual void step(ParameterSet& params) = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(ParameterSet& params) override;

 private:
  double lr_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam : public Optimizer {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(ParameterSet& params) override;
  std::uint64_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

// Flat archive: magic "PADTTSCK", u64 LE header length, JSON header, then
// each parameter's little-endian float64 payload in header order.
struct Checkpoint {
  nlohmann::json meta;  // config, config_hash, stage, ...
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  std::vector<Entry> entries;

  static Checkpoint capture(const ParameterSet& params, nlohmann::json meta);
  void restore(ParameterSet& params) const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const Entry* find(const std::string& name) const;
  // Raw little-endian payload bytes of one entry.
  std::string payload_bytes(const std::string& name) const;
};

std::uint64_t fnv1a64(const std::string& text);

}  // namespace padtts
