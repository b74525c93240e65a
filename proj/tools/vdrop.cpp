#include "vdrop/cli.hpp"

int main(int argc, char** argv) { return vdrop::cli::main(argc, argv); }
