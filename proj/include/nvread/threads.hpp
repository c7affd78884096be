#ifndef NVREAD_THREADS_HPP
#define NVREAD_THREADS_HPP

namespace nvread {

// Worker-thread budget for parallel primitives. Resolution order:
// set_max_threads() override, NVREAD_THREADS environment variable,
// hardware concurrency. Always >= 1. Results never depend on the budget;
// only wall time does.
int max_threads();
void set_max_threads(int n);  // n <= 0 restores automatic selection

}  // namespace nvread

#endif  // NVREAD_THREADS_HPP
