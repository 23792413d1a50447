// Command-line driver; see src/cli for the stage implementations.
#include "ec2lab/cli/cli.hpp"

int main(int argc, char** argv) { return ec2lab::cli::run_cli(argc, argv); }
