#include "emharness/cli.hpp"

int main(int argc, char** argv) { return emh::cli::main(argc, argv); }
