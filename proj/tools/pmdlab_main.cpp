#include "pmdlab/cli.hpp"

int main(int argc, char** argv) { return pmdlab::cli_main(argc, argv); }
