#include "katana/harness.hpp"

int main(int argc, char** argv) { return katana::run_cli(argc, argv); }
