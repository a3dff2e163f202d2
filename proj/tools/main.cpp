#include "crispdepth/cli.hpp"

int main(int argc, char** argv) { return crisp::cli::run(argc, argv); }
