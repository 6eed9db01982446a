// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace himapper {

// Keeps freed tensor buffers inside the heap instead of returning them to
// the kernel after every step (glibc only; a no-op elsewhere). Training
// allocates and frees the same large buffers each step, and the default
// thresholds turn that into mmap/munmap churn.
void tune_allocator();

}  // namespace himapper
