#include "paretomax/cli.hpp"

int main(int argc, char** argv) { return paretomax::cli::main(argc, argv); }
