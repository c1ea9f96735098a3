#include "dgmarl/cli.hpp"

int main(int argc, char** argv) { return dgmarl::cli::main(argc, argv); }
