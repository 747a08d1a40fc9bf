// Writes the demo dataset, replay fixture and configs into a directory.

#include <iostream>

#include "sim_backend.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: decc_make_demo <output-dir>\n";
    return 1;
  }
  try {
    decc::sim::write_demo(argv[1]);
  } catch (const std::exception& e) {
    std::cerr << "decc_make_demo: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
