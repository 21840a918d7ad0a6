#include <atomic>
#include <csignal>
#include <iostream>

#include "evoqa/cli.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void handle_interrupt(int) { g_stop.store(true); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, handle_interrupt);
  std::signal(SIGTERM, handle_interrupt);
  evoqa::CliContext ctx{std::cout, std::cerr};
  ctx.stop = &g_stop;
  return evoqa::run_cli(argc, argv, ctx);
}
