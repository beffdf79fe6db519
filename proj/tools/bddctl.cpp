#include "bilinear_dd/cli.hpp"

int main(int argc, char** argv) { return bdd::cli::run(argc, argv); }
