#pragma once

#include "mrrag/cli.hpp"

#include <atomic>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace mrrag::testing {

struct CliRun {
    int code = -1;
    std::string out;
    std::string err;
};

/// Runs the CLI in-process; argv[0] is supplied.
inline CliRun run_cli(const std::vector<std::string>& args, const std::string& input = {},
                      const std::atomic<bool>* stop = nullptr, std::function<void(int)> on_listening = {}) {
    std::vector<const char*> argv{"mrrag"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::istringstream in(input);
    std::ostringstream out;
    std::ostringstream err;
    cli::Io io{in, out, err, stop, std::move(on_listening)};
    CliRun r;
    r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), io);
    r.out = out.str();
    r.err = err.str();
    return r;
}

} // namespace mrrag::testing
