#include "msmemu/cli.hpp"

int main(int argc, char** argv) { return msmemu::cli_main(argc, argv); }
