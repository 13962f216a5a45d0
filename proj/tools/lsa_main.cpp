#include "lsa/cli.hpp"

int main(int argc, char** argv) { return lsa::dispatch(argc, argv); }
