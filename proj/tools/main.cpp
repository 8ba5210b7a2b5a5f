#include <cstdio>

int main() {
    std::puts("hyperlora CLI placeholder");
    return 0;
}
