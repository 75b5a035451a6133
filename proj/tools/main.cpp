#include "lingbridge/cli.hpp"

int main(int argc, char** argv) {
    return lingbridge::cli_dispatch(std::vector<std::string>(argv, argv + argc));
}
