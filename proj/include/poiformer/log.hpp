#pragma once

#include <fmt/format.h>

#include <cstdio>

namespace poiformer::log {

enum class Level { quiet, warn, info };

Level level();
void set_level(Level level);

template <typename... Args>
void info(fmt::format_string<Args...> f, Args&&... args) {
    if (level() >= Level::info) fmt::print(stderr, "[info] {}\n", fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
void warn(fmt::format_string<Args...> f, Args&&... args) {
    if (level() >= Level::warn) fmt::print(stderr, "[warn] {}\n", fmt::format(f, std::forward<Args>(args)...));
}

}  // namespace poiformer::log
