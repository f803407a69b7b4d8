#pragma once

#include <optional>
#include <string>
#include <utility>

#include "ensi/core/error.hpp"
#include "ensi/runtime/tracker.hpp"

namespace ensi {

namespace detail {
template <class T>
int depth_of(const T& x) {
  if constexpr (requires { x.depth(); }) return x.depth();
  else return x.info.path_depth;
}
template <class T>
int level_of(const T& x) {
  if constexpr (requires { x.cols; }) return x.level();
  else return x.level();
}
}  // namespace detail

/// Runs `fn` as a tracked stage. The stage's consumption is the growth of
/// path depth from the deepest input to the output. A DepthExceeded thrown
/// inside gets the stage label prepended to its tag.
template <class Fn, class... In>
auto run_stage(LevelTracker* tracker, const std::string& label, Fn&& fn, const In&... inputs) {
  int depth_in = 0, level_in = 1 << 30;
  ((depth_in = std::max(depth_in, detail::depth_of(inputs)), level_in = std::min(level_in, detail::level_of(inputs))),
   ...);
  if constexpr (sizeof...(In) == 0) level_in = 0;
  std::optional<LevelTracker::Open> open;
  if (tracker) open = tracker->begin(label, depth_in, level_in);
  try {
    auto out = std::forward<Fn>(fn)();
    if (tracker) tracker->end(*open, detail::depth_of(out), detail::level_of(out));
    return out;
  } catch (const DepthExceeded& e) {
    throw DepthExceeded(e.tag().empty() ? label : label + "/" + e.tag(), e.required(), e.available());
  }
}

}  // namespace ensi
