#include "compass/cli.hpp"

int main(int argc, char** argv) { return compass::cli::main(argc, argv); }
