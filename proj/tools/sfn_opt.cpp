#include "sfn/cli.hpp"

int main(int argc, char** argv) { return sfn::parse_and_dispatch(argc, argv); }
