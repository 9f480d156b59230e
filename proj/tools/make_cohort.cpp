// Writes a synthetic cohort drawn from the first simulation design.
#include <cstdint>
#include <iostream>
#include <string>

#include "ntcp/io.hpp"
#include "ntcp/sim.hpp"

int main(int argc, char** argv) {
  if (argc != 4) {
    std::cerr << "usage: ntcp_make_cohort <n> <seed> <out.csv>\n";
    return 2;
  }
  const int n = std::stoi(argv[1]);
  const auto seed = static_cast<std::uint64_t>(std::stoull(argv[2]));
  const auto dgp = ntcp::sim::Sim1Config{}.dgp();
  const auto cohort = ntcp::sim::generate_cohort(dgp, n, seed);
  ntcp::io::write_text(argv[3], ntcp::io::cohort_csv(cohort.cohort));
  return 0;
}
