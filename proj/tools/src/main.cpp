#include "cct/harness.hpp"

int main(int argc, char** argv) { return cct::harness::run_cli(argc, argv); }
