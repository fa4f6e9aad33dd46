#include <cstdio>

int main() {
  std::puts("depthgrow: subcommands not wired up yet");
  return 1;
}
