#include "wsdfm/pipeline.hpp"

int main(int argc, char** argv) { return wsdfm::pipeline::run_cli(argc, argv); }
