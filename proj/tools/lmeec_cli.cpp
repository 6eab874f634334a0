// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmeec/cli.hpp"

int main(int argc, char** argv) { return lmeec::cli::cli_dispatch(argc, argv); }
