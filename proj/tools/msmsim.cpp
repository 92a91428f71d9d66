// Command line driver.  Subcommands are filled in as the library grows; this
// stub keeps the build green while the core modules land.

#include <msmsim/version.hpp>

#include <cstdio>

int main() {
    std::printf("msmsim %s\n", msmsim::version_string);
    return 0;
}
