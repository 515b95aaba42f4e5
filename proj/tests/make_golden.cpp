// Regenerates the golden checkpoint fixtures:
//   make_golden <dir>
// writes golden_net.ckpt, golden_input.txt and golden_output.txt.
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "golden.hpp"
#include "mtlu/checkpoint.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: make_golden <dir>\n");
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  auto net = golden::build_net();
  const auto x = golden::input();
  mtlu::save_checkpoint(net, dir / "golden_net.ckpt");
  golden::write_values(dir / "golden_input.txt", x);
  golden::write_values(dir / "golden_output.txt", net.infer(x));
  return 0;
}
