#include "tpower/cli.hpp"

int main(int argc, char** argv) { return tpower::cli_main(argc, argv); }
