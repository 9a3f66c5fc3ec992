#include "segan/cli.hpp"

int main(int argc, char** argv) { return segan::cli_io::cli(argc, argv); }
