#include "vince/cli.hpp"

int main(int argc, char** argv) { return vince::cli::run(argc, argv); }
