#pragma once

#include <deque>
#include <string>
#include <vector>

#include "tvrl/ag/tape.hpp"
#include "tvrl/core/rng.hpp"

namespace tvrl::nn {

enum class Init { kNormal002, kZeros, kOnes };

/// Owner of a model's parameters with stable addresses and registration
/// order. Initialization is keyed by (seed, parameter name) so the layout of
/// the store never changes the draw a given tensor receives.
template <class T>
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : seed_(seed) {}

  ag::Param<T>& add(const std::string& name, int rows, int cols, Init init,
                    bool no_decay = false) {
    store_.emplace_back();
    ag::Param<T>& p = store_.back();
    p.name = name;
    p.no_decay = no_decay;
    p.value.resize(rows, cols);
    switch (init) {
      case Init::kZeros:
        p.value.setZero();
        break;
      case Init::kOnes:
        p.value.setOnes();
        break;
      case Init::kNormal002: {
        Rng rng = Rng(seed_).derive("param", fnv1a64(name));
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j)
            p.value(i, j) = static_cast<T>(rng.normal(0.0, 0.02));
        break;
      }
    }
    order_.push_back(&p);
    return p;
  }

  const std::vector<ag::Param<T>*>& all() { return order_; }
  const std::vector<ag::Param<T>*>& all() const { return order_; }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto* p : order_) n += p->size();
    return n;
  }

  void set_trainable(bool trainable) {
    for (auto* p : order_) p->trainable = trainable;
  }

  void zero_grads() {
    for (auto* p : order_) p->zero_grad();
  }

  /// Order-independent digest of all parameter bytes; used by freeze tests.
  uint64_t checksum() const {
    uint64_t h = 14695981039346656037ull;
    for (const auto* p : order_) {
      h ^= fnv1a64(p->name);
      h ^= fnv1a64(p->value.data(), sizeof(T) * p->value.size());
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  uint64_t seed_;
  std::deque<ag::Param<T>> store_;
  std::vector<ag::Param<T>*> order_;
};

}  // namespace tvrl::nn
