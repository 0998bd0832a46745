#include "hdib/runner.hpp"

int main(int argc, char** argv) { return hdib::run_cli(argc, argv); }
