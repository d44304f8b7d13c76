#include "ddrb/cli.hpp"
int main(int argc, char** argv) { return ddrb::cli::cli_main(argc, argv); }
