// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "livekv/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return livekv::cli::run_cli(args, std::cout, std::cerr);
}
