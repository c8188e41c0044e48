#include "sadforge/pipeline.hpp"

int main(int argc, char** argv) { return sadforge::pipeline::run_cli(argc, argv); }
