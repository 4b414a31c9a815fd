#include <cstdio>

int main() {
    std::puts("hpnet: subcommands not wired up yet");
    return 1;
}
