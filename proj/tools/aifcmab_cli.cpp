#include "aifcmab/cli.hpp"

int main(int argc, char** argv) { return aifcmab::cli::run(argc, argv); }
