#include "keyreg/util.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace keyreg {

namespace {
std::atomic<int> g_thread_limit{0};
}

void set_thread_limit(int n) { g_thread_limit.store(n < 0 ? 0 : n); }

int thread_limit() {
    int lim = g_thread_limit.load();
    if (lim == 0) {
        unsigned hw = std::thread::hardware_concurrency();
        lim = hw == 0 ? 1 : static_cast<int>(hw);
    }
    return lim;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    int workers = std::min(thread_limit(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            for (int i = t; i < n; i += workers) fn(i);
        });
    }
    for (std::thread& th : pool) th.join();
}

void write_file_atomic(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw std::runtime_error("rename failed: " + tmp + " -> " + path);
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in && !in.eof()) throw std::runtime_error("read failed: " + path);
    return ss.str();
}

}  // namespace keyreg
