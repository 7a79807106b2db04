#include "arv/cli.hpp"

int main(int argc, char** argv) { return arv::cli_run(argc, argv); }
