#pragma once

namespace diffood {

/// Raises glibc's mmap and trim thresholds so the many short-lived tensor
/// buffers of a training step are recycled from the heap instead of being
/// mapped and unmapped each time. No-op on other allocators.
void tune_allocator();

}  // namespace diffood
