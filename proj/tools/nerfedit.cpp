#include "nerfedit/cli.hpp"

int main(int argc, char** argv) { return nerfedit::cli::run(argc, argv); }
