#include "delib/parallel.hpp"

#include <cstdlib>
#include <string>

#include "delib/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace delib {

Execution default_execution() {
  if (const char* env = std::getenv("DELIB_EXECUTION")) return parse_execution(env);
  return Execution::parallel;
}

Execution parse_execution(std::string_view text) {
  if (text == "serial") return Execution::serial;
  if (text == "parallel") return Execution::parallel;
  throw ContractViolation("execution must be 'serial' or 'parallel', got '" + std::string(text) + "'");
}

int worker_count(Execution exec) {
#ifdef _OPENMP
  return exec == Execution::parallel ? omp_get_max_threads() : 1;
#else
  (void)exec;
  return 1;
#endif
}

}  // namespace delib
