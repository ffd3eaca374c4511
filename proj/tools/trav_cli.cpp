#include "trav/harness.hpp"

int main(int argc, char** argv) { return trav::run_cli(argc, argv); }
