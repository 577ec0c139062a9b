#include "metadetector/cli.hpp"

int main(int argc, char** argv) { return metadet::cli_main(argc, argv); }
