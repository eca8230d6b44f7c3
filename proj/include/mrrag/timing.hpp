#pragma once

// Clocks and per-step timers for the answer pipeline.

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <string>

namespace mrrag {

class Clock {
public:
    virtual ~Clock() = default;
    virtual std::chrono::nanoseconds now() = 0;
};

class SteadyClock : public Clock {
public:
    std::chrono::nanoseconds now() override {
        return std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now().time_since_epoch());
    }
};

/// Advances by a fixed tick on every read, so timings are reproducible.
class FixedClock : public Clock {
public:
    explicit FixedClock(std::chrono::nanoseconds tick = std::chrono::milliseconds(1)) : tick_(tick) {}
    std::chrono::nanoseconds now() override {
        current_ += tick_;
        return current_;
    }

private:
    std::chrono::nanoseconds tick_;
    std::chrono::nanoseconds current_{0};
};

using ClockFactory = std::function<std::unique_ptr<Clock>()>;

inline ClockFactory steady_clock_factory() {
    return [] { return std::make_unique<SteadyClock>(); };
}

inline ClockFactory fixed_clock_factory() {
    return [] { return std::make_unique<FixedClock>(); };
}

/// Attributes the time since the previous mark to a step. Marks are contiguous,
/// so the step durations add up to the total.
class StepTimer {
public:
    explicit StepTimer(Clock& clock) : clock_(clock), start_(clock.now()), last_(start_) {}

    void mark(const std::string& step) {
        const auto t = clock_.now();
        steps_[step] += t - last_;
        last_ = t;
    }

    std::map<std::string, double> milliseconds() const {
        std::map<std::string, double> out;
        for (const auto& [step, d] : steps_) out[step] = to_ms(d);
        return out;
    }

    double total_ms() const { return to_ms(last_ - start_); }

private:
    static double to_ms(std::chrono::nanoseconds d) { return static_cast<double>(d.count()) / 1e6; }

    Clock& clock_;
    std::chrono::nanoseconds start_;
    std::chrono::nanoseconds last_;
    std::map<std::string, std::chrono::nanoseconds> steps_;
};

} // namespace mrrag
