#include "dlrrec/cli.hpp"
#include "dlrrec/log.hpp"

int main(int argc, char** argv) {
  dlrrec::init_logging();
  return dlrrec::cli::run(argc, argv);
}
