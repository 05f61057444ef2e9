#include "laneseq/cli.hpp"

int main(int argc, char** argv) { return laneseq::run_cli(argc, argv); }
