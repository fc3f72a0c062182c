#include "clot/cli.hpp"

int main(int argc, char** argv) { return clot::cli::run(argc, argv); }
