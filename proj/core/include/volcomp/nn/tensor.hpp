#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <vector>

namespace volcomp::nn {

// Vectorized kernels peel loops by pointer alignment, so floating-point
// results depend on where a buffer lands. Fixed alignment keeps runs bit-identical.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

inline std::size_t numel(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

/// Dense row-major tensor. Feature maps use shape {C, nx, ny, nz} with the
/// spatial part flattened x-fastest, matching Volume3D.
template <class T>
struct Tensor {
  std::vector<int> shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T{0}) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(std::vector<int> s, const std::vector<T>& d) : shape(std::move(s)), data(d.begin(), d.end()) {}

  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] int dim(std::size_t i) const { return shape[i]; }
  [[nodiscard]] int channels() const { return shape.front(); }
  // Elements per channel for feature maps.
  [[nodiscard]] std::size_t spatial() const { return shape.empty() ? 0 : data.size() / static_cast<std::size_t>(shape[0]); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

}  // namespace volcomp::nn
