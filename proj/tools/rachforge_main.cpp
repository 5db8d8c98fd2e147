#include "rachforge/cli.hpp"

int main(int argc, char** argv) { return rachforge::run_main(argc, argv); }
