// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include <malloc.h>

#include "mudet/cli.hpp"

int main(int argc, char** argv) {
  // Keep freed tensor buffers in the heap; fresh mmap'd pages are costly.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return mudet::run_cli(argc, argv);
}
