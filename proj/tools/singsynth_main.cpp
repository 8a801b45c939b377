#include "singsynth/cli.hpp"

int main(int argc, char** argv) { return singsynth::cli::cli_main(argc, argv); }
