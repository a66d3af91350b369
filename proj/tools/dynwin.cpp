#include "dynwin/cli.hpp"

int main(int argc, char** argv) { return dynwin::run_cli(argc, argv); }
