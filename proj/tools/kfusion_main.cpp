#include "kfusion/cli.hpp"

int main(int argc, char** argv) { return kfusion::run_cli(argc, argv); }
