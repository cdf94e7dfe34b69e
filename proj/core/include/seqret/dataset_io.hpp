#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seqret/ctes.hpp"

namespace seqret {

/// One sequence per line: {"id": str, "horizon": float, "events": [[t, m], ...]}.
std::string sequence_to_json_line(const EventSequence& s);
EventSequence sequence_from_json_line(const std::string& line, std::size_t max_len = kDefaultMaxLength);

void write_sequences_jsonl(const std::filesystem::path& path, const std::vector<const EventSequence*>& seqs);
std::vector<EventSequence> read_sequences_jsonl(const std::filesystem::path& path, std::size_t max_len = kDefaultMaxLength);

/// One query per line: {"query": str, "positives": [str], "negatives": [str]}.
void write_labels_jsonl(const std::filesystem::path& path, const RelevanceLabels& labels);
RelevanceLabels read_labels_jsonl(const std::filesystem::path& path);

/// Directory layout: corpus.jsonl, queries.jsonl, labels.jsonl and dataset.json
/// (vocabulary size and query split).
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

/// printf %.17g, which round-trips every finite double.
std::string format_double(double v);

}  // namespace seqret
