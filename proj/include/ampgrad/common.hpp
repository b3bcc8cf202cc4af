#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ampgrad {

// Exception hierarchy. Every failure mode in the library maps onto one of
// these; tests match on the concrete type.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values (non-finite factors, out-of-range labels, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Tensor extent mismatches and invalid layer geometry.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed computation graphs (cycles, non-scalar loss roots).
class GraphError : public Error {
 public:
  using Error::Error;
};

// API called in the wrong order (backward on a consumed tape, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment / model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unparseable text or binary input.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// round-half-away-from-zero, used for amp subset sizing
inline long round_half_away(double x) {
  return static_cast<long>(x >= 0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}

// Allocator pinning every tensor buffer to one alignment class. Vectorized
// kernels peel loops based on the base address; with all buffers identically
// aligned the floating-point reduction order is a function of shapes alone,
// which keeps training bit-reproducible across process restarts.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(Align));
  }

  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  bool operator==(const AlignedAllocator&) const noexcept { return true; }
  bool operator!=(const AlignedAllocator&) const noexcept { return false; }
};

}  // namespace ampgrad
