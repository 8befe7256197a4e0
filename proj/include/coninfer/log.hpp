#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace coninfer {

/// Shared stderr logger. Level comes from CONINFER_LOG (trace, debug, info,
/// warn, error, off); the default is warn.
inline spdlog::logger& logger() {
    static const std::shared_ptr<spdlog::logger> instance = [] {
        auto sink = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
        auto log = std::make_shared<spdlog::logger>("coninfer", sink);
        log->set_pattern("[%l] %v");
        const char* env = std::getenv("CONINFER_LOG");
        log->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
        return log;
    }();
    return *instance;
}

} // namespace coninfer
