#include "graphnav/cli.hpp"

int main(int argc, char** argv) { return graphnav::cli::run_cli(argc, argv); }
