#pragma once

#include <chrono>
#include <cstdint>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "ensi/core/error.hpp"
#include "ensi/runtime/counters.hpp"
#include "json.hpp"

namespace ensi {

/// One closed stage: levels consumed along its deepest path, op deltas, time.
struct StageRecord {
  std::string label;
  int levels = 0;
  int level_in = 0;
  int level_out = 0;
  OpCounters ops;
  double seconds = 0;
};

struct BudgetReport {
  std::string stage;
  int expected = 0;
  int measured = 0;
  bool pass = false;
  std::string ledger;  // per-op breakdown, filled on failure too
};

/// Stage ledger for a pipeline. Levels are measured as the growth of the
/// ciphertexts' path depth between stage entry and exit, so refreshes inside a
/// stage do not hide consumption.
class LevelTracker {
 public:
  explicit LevelTracker(const CounterSet& counters) : counters_(&counters) {}

  struct Open {
    std::string label;
    int depth_in = 0;
    int level_in = 0;
    OpCounters before;
    std::chrono::steady_clock::time_point t0;
  };

  Open begin(std::string label, int depth_in, int level_in) const {
    return Open{std::move(label), depth_in, level_in, counters_->snapshot(), std::chrono::steady_clock::now()};
  }

  const StageRecord& end(const Open& open, int depth_out, int level_out) {
    StageRecord r;
    r.label = open.label;
    r.levels = depth_out - open.depth_in;
    r.level_in = open.level_in;
    r.level_out = level_out;
    r.ops = diff(open.before, counters_->snapshot());
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - open.t0).count();
    std::lock_guard lock(mu_);
    records_.push_back(std::move(r));
    return records_.back();
  }

  std::vector<StageRecord> records() const {
    std::lock_guard lock(mu_);
    return records_;
  }

  std::vector<StageRecord> records(std::string_view label) const {
    std::vector<StageRecord> out;
    std::lock_guard lock(mu_);
    for (const auto& r : records_)
      if (r.label == label) out.push_back(r);
    return out;
  }

  /// Pass iff every recorded run of `stage` consumed exactly `expected` levels.
  BudgetReport assert_budget(std::string_view stage, int expected) const {
    auto rs = records(stage);
    if (rs.empty()) throw Error("assert_budget: unknown stage '" + std::string(stage) + "'");
    BudgetReport b;
    b.stage = std::string(stage);
    b.expected = expected;
    b.pass = true;
    b.measured = rs.front().levels;
    std::ostringstream os;
    for (const auto& r : rs) {
      if (r.levels != expected) {
        b.pass = false;
        b.measured = r.levels;
      }
      os << r.label << ": levels=" << r.levels << " (" << r.level_in << "->" << r.level_out << ")";
      for (std::size_t i = 0; i < kOpCount; ++i)
        if (auto v = r.ops.at(Op(i))) os << ' ' << kOpNames[i] << '=' << v;
      os << '\n';
    }
    b.ledger = os.str();
    return b;
  }

  void clear() {
    std::lock_guard lock(mu_);
    records_.clear();
  }

  void merge(const LevelTracker& other) {
    auto rs = other.records();
    std::lock_guard lock(mu_);
    records_.insert(records_.end(), rs.begin(), rs.end());
  }

 private:
  const CounterSet* counters_;
  mutable std::mutex mu_;
  std::vector<StageRecord> records_;
};

inline nlohmann::json to_json(const OpCounters& c) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < kOpCount; ++i) j[std::string(kOpNames[i])] = c.at(Op(i));
  return j;
}

inline nlohmann::json to_json(const StageRecord& r) {
  return {{"label", r.label},       {"levels", r.levels}, {"level_in", r.level_in},
          {"level_out", r.level_out}, {"ops", to_json(r.ops)}, {"wall_s", r.seconds}};
}

/// One JSON object per line, one line per stage.
inline std::string report_records(const std::vector<StageRecord>& rs) {
  std::string out;
  for (const auto& r : rs) out += to_json(r).dump() + '\n';
  return out;
}

inline std::string report_table(const std::vector<StageRecord>& rs) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "stage" << std::right << std::setw(7) << "levels" << std::setw(9) << "lvl"
     << std::setw(7) << "add" << std::setw(7) << "sub" << std::setw(7) << "mult" << std::setw(7) << "pmult"
     << std::setw(7) << "rot" << std::setw(8) << "refresh" << std::setw(11) << "wall(s)" << '\n';
  for (const auto& r : rs) {
    std::ostringstream lv;
    lv << r.level_in << "->" << r.level_out;
    os << std::left << std::setw(22) << r.label << std::right << std::setw(7) << r.levels << std::setw(9) << lv.str()
       << std::setw(7) << r.ops.add << std::setw(7) << r.ops.sub << std::setw(7) << r.ops.mult << std::setw(7)
       << r.ops.pmult << std::setw(7) << r.ops.rot << std::setw(8) << r.ops.refresh << std::setw(11) << std::fixed
       << std::setprecision(4) << r.seconds << '\n';
  }
  return os.str();
}

}  // namespace ensi
