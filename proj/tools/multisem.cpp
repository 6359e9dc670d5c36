#include <multisem/cli.hpp>

#include <iostream>

int main(int argc, char** argv)
{
    return multisem::cli::run({ argv + 1, argv + argc }, std::cout, std::cerr);
}
