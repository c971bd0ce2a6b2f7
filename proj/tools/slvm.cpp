#include "slvm/cli.hpp"

int main(int argc, char** argv) { return slvm::cli::run_cli(argc, argv); }
