#include "specfuse/cli.hpp"

int main(int argc, char** argv) { return specfuse::run_cli(argc, argv); }
