#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "perclab/log.hpp"

int main(int argc, char** argv) {
  perclab::set_warnings_enabled(false);
  doctest::Context ctx;
  ctx.applyCommandLine(argc, argv);
  return ctx.run();
}
