#include "mvbranch/cli.hpp"

int main(int argc, char** argv) { return mvb::cli::run_cli(argc, argv); }
