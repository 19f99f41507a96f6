#include "mose/cli.hpp"

int main(int argc, char** argv) { return mose::cli::run(argc, argv); }
