// SPDX-License-Identifier: Apache-2.0
#include "focuslab/cli/app.hpp"

int main(int argc, char** argv) { return focuslab::cli::run(argc, argv); }
