#include "qtart/cli.hpp"

int main(int argc, char** argv) { return qtart::dispatch(argc, argv); }
