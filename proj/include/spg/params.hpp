#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "spg/autodiff.hpp"

namespace spg {

using GradMap = std::map<std::string, Matrix>;

// Named parameter arrays. Iteration (and serialization) order is name-sorted.
class ParamStore {
 public:
  // Throws if `name` already exists.
  void add(const std::string& name, Matrix value);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Matrix& get(const std::string& name) const;
  // Replace the value; shape must match the registered one.
  void set(const std::string& name, const Matrix& value);
  Matrix& mutable_value(const std::string& name);

  const std::map<std::string, Matrix>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  // Weight file: JSON object name -> {"shape": [r, c], "data": base64(f32 LE)}.
  std::string to_json() const;
  static ParamStore from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ParamStore load(const std::filesystem::path& path);

 private:
  std::map<std::string, Matrix> entries_;
};

// Deterministic 64-bit generator with a platform-independent uniform draw.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t state_;
};

// Parameter registration helpers used by every network block.
// Weight init is uniform(-a, a) with a = 1/sqrt(fan_in); norm gains start at 1.
void add_linear(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng);
void add_norm(ParamStore& store, const std::string& prefix, Index width);

// Binds ParamStore entries onto a tape as gradient-tracked leaves.
class ParamBinder {
 public:
  ParamBinder(ad::Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

  ad::Var operator()(const std::string& name);
  // Use `v` for `name` instead of a fresh leaf; shape must match the store.
  void bind(const std::string& name, ad::Var v);
  // Gradient of every bound parameter after tape.backward(); unbound
  // parameters get zero matrices so the map always aligns with the store.
  GradMap gradients() const;
  ad::Tape& tape() const { return tape_; }

 private:
  ad::Tape& tape_;
  const ParamStore& store_;
  std::map<std::string, ad::Var> bound_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamState {
  GradMap first;
  GradMap second;
  std::int64_t step = 0;
};

// AdamW: decoupled weight decay, bias-corrected moments.
void adam_step(ParamStore& store, const GradMap& grads, AdamState& state, const AdamOptions& opt);

// Accumulate `src` into `dst` (same keys/shapes, or dst empty).
void accumulate_grads(GradMap& dst, const GradMap& src);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

}  // namespace spg
