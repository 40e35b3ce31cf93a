#include <selftune/cli.hpp>

int main(int argc, char** argv) { return selftune::cli::run(argc, argv); }
