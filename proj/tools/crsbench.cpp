#include "crs/cli.hpp"

int main(int argc, char** argv) { return crs::cli::run_cli(argc, argv); }
