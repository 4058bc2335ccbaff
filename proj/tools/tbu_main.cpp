#include "tbu/cli.hpp"

int main(int argc, char** argv) { return tbu::run_cli(argc, argv); }
