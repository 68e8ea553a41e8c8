#include "dfvpo/cli.hpp"

int main(int argc, char** argv) { return dfvpo::cli::run(argc, argv); }
