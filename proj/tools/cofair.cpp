#include "cofair/cli.hpp"

int main(int argc, char** argv) { return cofair::run_cli(argc, argv); }
