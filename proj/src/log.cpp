#include "poiformer/log.hpp"

namespace poiformer::log {

namespace {
Level g_level = Level::warn;
}

Level level() { return g_level; }
void set_level(Level l) { g_level = l; }

}  // namespace poiformer::log
