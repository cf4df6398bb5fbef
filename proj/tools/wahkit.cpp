#include "wahkit/cli.hpp"

int main(int argc, char** argv) { return wahkit::cli_main(argc, argv); }
