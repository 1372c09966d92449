#include "topopt/cli.hpp"

int main(int argc, char** argv) { return topopt::run_cli(argc, argv); }
