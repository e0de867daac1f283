#include "relink/cli.hpp"

int main(int argc, char** argv) { return relink::cli::run(argc, argv); }
