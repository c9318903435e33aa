#include "lfshield/cli.hpp"

int main(int argc, char** argv) { return lfshield::cli_main(argc, argv); }
