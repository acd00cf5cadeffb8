#include "cli.hpp"

int main(int argc, char** argv) { return sfr::cli::run(argc, argv); }
