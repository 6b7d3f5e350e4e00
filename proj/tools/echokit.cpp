#include "echokit/cli.hpp"

int main(int argc, char **argv) { return echokit::cli::dispatch(argc, argv); }
