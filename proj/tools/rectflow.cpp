#include <iostream>

#include "rectflow/commands.hpp"

int main(int argc, char** argv)
{
    return rectflow::run_cli(argc, argv, std::cout, std::cerr);
}
