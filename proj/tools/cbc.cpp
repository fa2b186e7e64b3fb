#include "cbc/cli.hpp"

int main(int argc, char** argv) { return cbc::cli_main(argc, argv); }
