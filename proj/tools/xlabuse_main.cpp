#include "xlabuse/cli.hpp"

int main(int argc, char** argv) { return xlabuse::cli::run(argc, argv); }
