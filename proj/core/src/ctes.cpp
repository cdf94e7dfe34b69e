#include "seqret/ctes.hpp"

#include <cmath>

#include "seqret/errors.hpp"

namespace seqret {

EventSequence::EventSequence(std::string id, std::vector<Event> events, double horizon, std::size_t max_len)
    : id_(std::move(id)), events_(std::move(events)), horizon_(horizon) {
  if (events_.empty()) throw SequenceError("sequence '" + id_ + "' is empty");
  if (events_.size() > max_len) {
    throw CapacityError("sequence '" + id_ + "' has " + std::to_string(events_.size()) + " events, cap is " +
                        std::to_string(max_len));
  }
  if (!std::isfinite(horizon_)) throw SequenceError("sequence '" + id_ + "' has a non-finite horizon");
  double prev = -1.0;
  for (std::size_t i = 0; i < events_.size(); ++i) {
    const double t = events_[i].time;
    if (!std::isfinite(t) || t < 0.0) throw SequenceError("sequence '" + id_ + "' has an invalid event time");
    if (i > 0 && !(t > prev)) {
      throw SequenceError("sequence '" + id_ + "' times are not strictly increasing at index " + std::to_string(i));
    }
    if (!(t < horizon_)) throw SequenceError("sequence '" + id_ + "' has an event at or past its horizon");
    prev = t;
  }
}

std::vector<double> EventSequence::times() const {
  std::vector<double> out;
  out.reserve(events_.size());
  for (const auto& e : events_) out.push_back(e.time);
  return out;
}

std::vector<std::size_t> EventSequence::marks() const {
  std::vector<std::size_t> out;
  out.reserve(events_.size());
  for (const auto& e : events_) out.push_back(e.mark);
  return out;
}

EventSequence EventSequence::with_times(const std::vector<double>& times, double horizon) const {
  if (times.size() != events_.size()) throw DimensionError("with_times: length mismatch");
  std::vector<Event> ev = events_;
  for (std::size_t i = 0; i < ev.size(); ++i) ev[i].time = times[i];
  return EventSequence(id_, std::move(ev), horizon, std::max(kDefaultMaxLength, ev.size()));
}

const QueryRelevance& RelevanceLabels::at(const std::string& query_id) const {
  const auto it = by_query.find(query_id);
  if (it == by_query.end()) throw InputError("no relevance labels for query '" + query_id + "'");
  return it->second;
}

double Dataset::horizon() const {
  double t = 0.0;
  for (const auto& [_, s] : corpus) t = std::max(t, s.horizon());
  for (const auto& [_, s] : queries) t = std::max(t, s.horizon());
  return t;
}

const EventSequence& Dataset::corpus_at(const std::string& id) const {
  const auto it = corpus.find(id);
  if (it == corpus.end()) throw InputError("unknown corpus id '" + id + "'");
  return it->second;
}

const EventSequence& Dataset::query_at(const std::string& id) const {
  const auto it = queries.find(id);
  if (it == queries.end()) throw InputError("unknown query id '" + id + "'");
  return it->second;
}

std::vector<std::string> Dataset::corpus_ids() const {
  std::vector<std::string> out;
  out.reserve(corpus.size());
  for (const auto& [id, _] : corpus) out.push_back(id);
  return out;
}

std::vector<std::string> Dataset::query_ids() const {
  std::vector<std::string> out;
  out.reserve(queries.size());
  for (const auto& [id, _] : queries) out.push_back(id);
  return out;
}

void Dataset::validate() const {
  auto check_marks = [this](const EventSequence& s) {
    for (const auto& e : s.events()) {
      if (e.mark >= mark_vocab_size) {
        throw SequenceError("sequence '" + s.id() + "' has mark " + std::to_string(e.mark) + " outside vocabulary of " +
                            std::to_string(mark_vocab_size));
      }
    }
  };
  for (const auto& [_, s] : corpus) check_marks(s);
  for (const auto& [_, s] : queries) check_marks(s);
  for (const auto& [q, rel] : labels.by_query) {
    if (!queries.count(q)) throw LabelingError("labels reference unknown query '" + q + "'");
    for (const auto& c : rel.positives) {
      if (!corpus.count(c)) throw LabelingError("labels reference unknown corpus id '" + c + "'");
      if (rel.negatives.count(c)) throw LabelingError("corpus id '" + c + "' is both positive and negative for '" + q + "'");
    }
    for (const auto& c : rel.negatives) {
      if (!corpus.count(c)) throw LabelingError("labels reference unknown corpus id '" + c + "'");
    }
  }
}

double positive_ratio(const Dataset& data) {
  if (data.labels.by_query.empty() || data.corpus.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& [_, rel] : data.labels.by_query) {
    acc += static_cast<double>(rel.positives.size()) / static_cast<double>(data.corpus.size());
  }
  return acc / static_cast<double>(data.labels.by_query.size());
}

}  // namespace seqret
