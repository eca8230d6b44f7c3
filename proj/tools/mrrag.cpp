#include "mrrag/cli.hpp"

#include <atomic>
#include <csignal>
#include <iostream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

} // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("mrrag"));
    if (const char* level = std::getenv("MRRAG_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(level));
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    mrrag::cli::Io io{std::cin, std::cout, std::cerr, &g_stop, {}};
    return mrrag::cli::run_cli(argc, argv, io);
}
