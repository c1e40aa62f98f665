// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0

#include "demmamba/cli.hpp"

int main(int argc, char** argv) { return demmamba::cli::run(argc, argv); }
