#include "seqret/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "seqret/errors.hpp"

namespace seqret {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string sequence_to_json_line(const EventSequence& s) {
  std::string line = "{\"id\":" + json(s.id()).dump() + ",\"horizon\":" + format_double(s.horizon()) + ",\"events\":[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) line += ',';
    line += '[' + format_double(s[i].time) + ',' + std::to_string(s[i].mark) + ']';
  }
  line += "]}";
  return line;
}

EventSequence sequence_from_json_line(const std::string& line, std::size_t max_len) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed sequence record: ") + e.what());
  }
  try {
    std::vector<Event> events;
    for (const auto& e : j.at("events")) {
      if (!e.is_array() || e.size() != 2) throw FormatError("event must be a [time, mark] pair");
      const auto mark = e.at(1).get<long long>();
      if (mark < 0) throw FormatError("negative mark");
      events.push_back({e.at(0).get<double>(), static_cast<std::size_t>(mark)});
    }
    return EventSequence(j.at("id").get<std::string>(), std::move(events), j.at("horizon").get<double>(), max_len);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed sequence record: ") + e.what());
  }
}

void write_sequences_jsonl(const std::filesystem::path& path, const std::vector<const EventSequence*>& seqs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto* s : seqs) out << sequence_to_json_line(*s) << '\n';
}

std::vector<EventSequence> read_sequences_jsonl(const std::filesystem::path& path, std::size_t max_len) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<EventSequence> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(sequence_from_json_line(line, max_len));
  }
  return out;
}

void write_labels_jsonl(const std::filesystem::path& path, const RelevanceLabels& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& [q, rel] : labels.by_query) {
    const json j = {{"query", q}, {"positives", rel.positives}, {"negatives", rel.negatives}};
    out << j.dump() << '\n';
  }
}

RelevanceLabels read_labels_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  RelevanceLabels labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      QueryRelevance rel;
      for (const auto& c : j.at("positives")) rel.positives.insert(c.get<std::string>());
      for (const auto& c : j.at("negatives")) rel.negatives.insert(c.get<std::string>());
      labels.by_query.emplace(j.at("query").get<std::string>(), std::move(rel));
    } catch (const json::exception& e) {
      throw FormatError(std::string("malformed label record: ") + e.what());
    }
  }
  return labels;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  std::vector<const EventSequence*> corpus;
  std::vector<const EventSequence*> queries;
  for (const auto& [_, s] : data.corpus) corpus.push_back(&s);
  for (const auto& [_, s] : data.queries) queries.push_back(&s);
  write_sequences_jsonl(dir / "corpus.jsonl", corpus);
  write_sequences_jsonl(dir / "queries.jsonl", queries);
  write_labels_jsonl(dir / "labels.jsonl", data.labels);
  const json meta = {{"format_version", 1},
                     {"mark_vocab_size", data.mark_vocab_size},
                     {"split", {{"train", data.split.train}, {"val", data.split.val}, {"test", data.split.test}}}};
  std::ofstream out(dir / "dataset.json", std::ios::binary);
  if (!out) throw FormatError("cannot write " + (dir / "dataset.json").string());
  out << meta.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset data;
  json meta;
  {
    std::ifstream in(dir / "dataset.json");
    if (!in) throw FormatError("cannot open " + (dir / "dataset.json").string());
    try {
      meta = json::parse(in);
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("malformed dataset.json: ") + e.what());
    }
  }
  try {
    if (meta.at("format_version").get<int>() != 1) throw FormatError("unsupported dataset format_version");
    data.mark_vocab_size = meta.at("mark_vocab_size").get<std::size_t>();
    const json& split = meta.at("split");
    data.split.train = split.at("train").get<std::vector<std::string>>();
    data.split.val = split.at("val").get<std::vector<std::string>>();
    data.split.test = split.at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset.json: ") + e.what());
  }
  for (auto& s : read_sequences_jsonl(dir / "corpus.jsonl")) {
    const std::string id = s.id();
    data.corpus.emplace(id, std::move(s));
  }
  for (auto& s : read_sequences_jsonl(dir / "queries.jsonl")) {
    const std::string id = s.id();
    data.queries.emplace(id, std::move(s));
  }
  data.labels = read_labels_jsonl(dir / "labels.jsonl");
  data.validate();
  return data;
}

}  // namespace seqret
