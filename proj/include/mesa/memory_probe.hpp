#pragma once

#include <cstddef>

namespace mesa {

// Process-wide accounting of basis-matrix buffers. Every block-sized basis
// allocation made while streaming holds a BasisAllocation token for its
// lifetime, so tests and the fit summary can check the memory contract.
struct BasisMemoryStats {
  std::size_t live_entries = 0;
  std::size_t peak_live_entries = 0;
  std::size_t largest_entries = 0;
  std::size_t largest_rows = 0;
  std::size_t allocations = 0;
};

BasisMemoryStats basis_memory_stats();
void reset_basis_memory_stats();

class BasisAllocation {
public:
  BasisAllocation() = default;
  BasisAllocation(std::size_t rows, std::size_t cols);
  ~BasisAllocation();

  BasisAllocation(BasisAllocation &&other) noexcept;
  BasisAllocation &operator=(BasisAllocation &&other) noexcept;
  BasisAllocation(const BasisAllocation &) = delete;
  BasisAllocation &operator=(const BasisAllocation &) = delete;

private:
  void release();
  std::size_t entries_ = 0;
};

} // namespace mesa
