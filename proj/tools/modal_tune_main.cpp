#include <modaltune/cli.hpp>

int main(int argc, char** argv) { return modaltune::cli::run(argc, argv); }
