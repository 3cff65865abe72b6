#include "mesa/memory_probe.hpp"

#include <atomic>

namespace mesa {
namespace {

std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<std::size_t> g_largest{0};
std::atomic<std::size_t> g_largest_rows{0};
std::atomic<std::size_t> g_count{0};

void raise_to(std::atomic<std::size_t> &slot, std::size_t value) {
  std::size_t seen = slot.load(std::memory_order_relaxed);
  while (seen < value &&
         !slot.compare_exchange_weak(seen, value, std::memory_order_relaxed)) {
  }
}

} // namespace

BasisMemoryStats basis_memory_stats() {
  BasisMemoryStats s;
  s.live_entries = g_live.load();
  s.peak_live_entries = g_peak.load();
  s.largest_entries = g_largest.load();
  s.largest_rows = g_largest_rows.load();
  s.allocations = g_count.load();
  return s;
}

void reset_basis_memory_stats() {
  g_peak = g_live.load();
  g_largest = 0;
  g_largest_rows = 0;
  g_count = 0;
}

BasisAllocation::BasisAllocation(std::size_t rows, std::size_t cols)
    : entries_(rows * cols) {
  const std::size_t live = g_live.fetch_add(entries_) + entries_;
  raise_to(g_peak, live);
  raise_to(g_largest, entries_);
  raise_to(g_largest_rows, rows);
  g_count.fetch_add(1, std::memory_order_relaxed);
}

BasisAllocation::~BasisAllocation() { release(); }

BasisAllocation::BasisAllocation(BasisAllocation &&other) noexcept
    : entries_(other.entries_) {
  other.entries_ = 0;
}

BasisAllocation &BasisAllocation::operator=(BasisAllocation &&other) noexcept {
  if (this != &other) {
    release();
    entries_ = other.entries_;
    other.entries_ = 0;
  }
  return *this;
}

void BasisAllocation::release() {
  if (entries_ != 0) {
    g_live.fetch_sub(entries_);
    entries_ = 0;
  }
}

} // namespace mesa
