#include "lfat/cli.hpp"

int main(int argc, char** argv) { return lfat::cli::dispatch(argc, argv); }
