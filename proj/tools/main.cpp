#include "acceptance/acceptance_suite.hpp"
#include "mlmcvi/harness.hpp"

int main(int argc, char** argv) {
  return mlmcvi::cli_main(argc, argv, [] { return mlmcvi::acceptance::run_acceptance_suite(); });
}
