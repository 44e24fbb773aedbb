#include "entikit/cli.hpp"

int main(int argc, char** argv) { return entikit::run_cli(argc, argv); }
