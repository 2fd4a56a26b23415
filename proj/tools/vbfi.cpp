#include "vbfi/cli.hpp"

int main(int argc, char** argv) { return vbfi::cli::run(argc, argv); }
