#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace seqret {

inline constexpr std::size_t kDefaultMaxLength = 512;

struct Event {
  double time = 0.0;
  std::size_t mark = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Ordered (time, mark) events observed on [0, horizon). Construction rejects
/// non-increasing or non-finite times, times at or past the horizon, empty
/// sequences and sequences above the length cap.
class EventSequence {
 public:
  EventSequence(std::string id, std::vector<Event> events, double horizon, std::size_t max_len = kDefaultMaxLength);

  const std::string& id() const noexcept { return id_; }
  const std::vector<Event>& events() const noexcept { return events_; }
  double horizon() const noexcept { return horizon_; }
  std::size_t size() const noexcept { return events_.size(); }
  const Event& operator[](std::size_t i) const { return events_[i]; }

  std::vector<double> times() const;
  std::vector<std::size_t> marks() const;
  double last_time() const { return events_.back().time; }

  /// Copy with new times (same marks, same id). Validated like construction.
  EventSequence with_times(const std::vector<double>& times, double horizon) const;

  friend bool operator==(const EventSequence&, const EventSequence&) = default;

 private:
  std::string id_;
  std::vector<Event> events_;
  double horizon_ = 0.0;
};

struct QueryRelevance {
  std::set<std::string> positives;  // C_q+
  std::set<std::string> negatives;  // C_q-

  friend bool operator==(const QueryRelevance&, const QueryRelevance&) = default;
};

struct RelevanceLabels {
  std::map<std::string, QueryRelevance> by_query;

  const QueryRelevance& at(const std::string& query_id) const;
  friend bool operator==(const RelevanceLabels&, const RelevanceLabels&) = default;
};

struct QuerySplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  friend bool operator==(const QuerySplit&, const QuerySplit&) = default;
};

struct Dataset {
  std::map<std::string, EventSequence> corpus;
  std::map<std::string, EventSequence> queries;
  RelevanceLabels labels;
  std::size_t mark_vocab_size = 0;
  QuerySplit split;

  /// Global horizon T: the largest sequence horizon.
  double horizon() const;
  const EventSequence& corpus_at(const std::string& id) const;
  const EventSequence& query_at(const std::string& id) const;
  std::vector<std::string> corpus_ids() const;
  std::vector<std::string> query_ids() const;

  /// Checks mark range and label consistency; throws on violation.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Fraction |C_q+| / |C| averaged over labeled queries.
double positive_ratio(const Dataset& data);

}  // namespace seqret
