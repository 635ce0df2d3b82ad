// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace mudet {

/// Entry point of the `mudet` executable. Exit codes: 0 ok, 1 usage or
/// configuration, 2 data error, 3 numerical failure.
int run_cli(int argc, const char* const* argv);

}  // namespace mudet
