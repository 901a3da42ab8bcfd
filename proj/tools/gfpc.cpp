#include <string>
#include <vector>

#include "gfpc/cli.hpp"

int main(int argc, char** argv) { return gfpc::dispatch(std::vector<std::string>(argv, argv + argc)); }
