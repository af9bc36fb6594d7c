#include "charter/cli.hpp"

int main(int argc, char** argv) { return charter::cli::dispatch(argc, argv); }
