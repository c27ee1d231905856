#include "karl/cli.hpp"

int main(int argc, char** argv) { return karl::cli_main(argc, argv); }
