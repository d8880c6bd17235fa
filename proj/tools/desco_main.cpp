#include "desco/commands.hpp"

int main(int argc, char** argv)
{
    return desco::run_cli(argc, argv);
}
