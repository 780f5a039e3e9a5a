#pragma once

#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace keyreg {

// Worker-thread ceiling for parallel_for. 0 = use hardware_concurrency.
void set_thread_limit(int n);
int thread_limit();

// Runs fn(i) for i in [0, n). Each index must touch disjoint outputs;
// work is strided across threads so results are identical at any
// thread count. Falls back to a plain loop when only one worker is
// available.
void parallel_for(int n, const std::function<void(int)>& fn);

// Writes content to path via a temp file + rename so readers never see
// a partial file. Throws std::runtime_error on I/O failure.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace keyreg
