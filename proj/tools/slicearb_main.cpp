#include "slicearb/runner.hpp"

int main(int argc, char** argv) { return slicearb::main_cli(argc, argv); }
