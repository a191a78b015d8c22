#include <cstdio>

int main() {
  std::puts("dfex: subcommands pending");
  return 0;
}
