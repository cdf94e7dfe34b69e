#include "seqret/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <ostream>
#include <set>
#include <variant>

#include "seqret/config_io.hpp"
#include "seqret/dataset_io.hpp"
#include "seqret/diff/checkpoint.hpp"
#include "seqret/errors.hpp"

namespace seqret::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Bad flags or missing inputs: exit 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
void read_key(const json& j, const char* key, T& out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

IndexProfile profile_from_json(const json& j) {
  if (j.is_string()) return IndexProfile::parse(j.get<std::string>());
  reject_unknown(j, {"tables", "bits"}, "index.profile");
  IndexProfile p;
  read_key(j, "tables", p.tables, "index.profile");
  read_key(j, "bits", p.bits, "index.profile");
  return p;
}

std::vector<std::string> split_queries(const Dataset& data, const std::string& split) {
  if (split == "train") return data.split.train;
  if (split == "val") return data.split.val;
  if (split == "test") return data.split.test;
  if (split == "all") return data.query_ids();
  throw UsageError("unknown split '" + split + "' (train, val, test, all)");
}

// --mode takes a scorer (selfattn, ...) or a retrieval pipeline (telescopic, ...).
using Mode = std::variant<ScoreMode, RetrievalMode>;

Mode parse_mode(const std::string& s) {
  try {
    return parse_retrieval_mode(s);
  } catch (const ConfigError&) {
  }
  try {
    return parse_score_mode(s);
  } catch (const ConfigError&) {
    throw UsageError("unknown mode '" + s + "'");
  }
}

std::string mode_name(const Mode& m) {
  return std::visit([](auto v) { return to_string(v); }, m);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

// Flags shared by the subcommands, as parsed.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string scheme;
  std::optional<std::size_t> k;
  std::optional<std::size_t> workers;
  std::string out;
  std::string data;
  std::string model;
  std::string index;
  std::string split;
  std::vector<std::string> query;
};

class Runner {
 public:
  Runner(std::string command, const Flags& flags, std::ostream& out) : command_(std::move(command)), flags_(flags), log_(out) {}

  int execute() {
    resolve();
    if (command_ == "gen-data") return gen_data();
    if (command_ == "train") return train_cmd();
    if (command_ == "build-index") return build_index_cmd();
    if (command_ == "query") return query_cmd();
    if (command_ == "evaluate") return evaluate_cmd();
    if (command_ == "bench-hash") return bench_hash_cmd();
    throw UsageError("unknown subcommand '" + command_ + "'");
  }

 private:
  // Config file first, then flags on top, then seed/workers pushed into every section.
  void resolve() {
    if (!flags_.config.empty()) cfg_ = load_run_config(flags_.config);
    std::string source = "default";
    seed_ = kDefaultSeed;
    if (cfg_.seed) {
      seed_ = *cfg_.seed;
      source = "config";
    }
    if (flags_.seed) {
      seed_ = *flags_.seed;
      source = "flag";
    }
    workers_ = flags_.workers.value_or(cfg_.workers.value_or(1));
    if (workers_ == 0) throw UsageError("--workers must be positive");
    if (flags_.k) cfg_.k = *flags_.k;
    if (cfg_.k == 0) throw UsageError("--k must be at least 1");
    if (!flags_.scheme.empty()) {
      try {
        cfg_.scheme = parse_hash_scheme(flags_.scheme);
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
    }
    if (!flags_.split.empty()) cfg_.split = flags_.split;
    if (!flags_.data.empty()) cfg_.data_path = flags_.data;
    if (!flags_.model.empty()) cfg_.model_path = flags_.model;
    if (!flags_.index.empty()) cfg_.index_path = flags_.index;
    if (!flags_.mode.empty()) {
      const Mode m = parse_mode(flags_.mode);
      if (command_ == "train" && !std::holds_alternative<ScoreMode>(m)) {
        throw UsageError("train needs a scorer mode, not '" + flags_.mode + "'");
      }
    }
    if (flags_.out.empty()) throw UsageError("--out is required");
    out_ = flags_.out;

    cfg_.generator.seed = seed_;
    cfg_.train.seed = seed_;
    cfg_.hash.seed = seed_;
    cfg_.evaluate.seed = seed_;
    cfg_.train.workers = workers_;
    cfg_.evaluate.workers = workers_;
    cfg_.retrieval.workers = workers_;

    log_ << "# seqret " << command_ << " seed=" << seed_ << " (" << source << ") workers=" << workers_
         << " out=" << out_.string() << '\n';
    fs::create_directories(out_);
  }

  void log(const std::string& line) { log_ << line << '\n'; }

  Dataset data() const {
    if (cfg_.data_path.empty()) throw UsageError("--data is required");
    return load_dataset(cfg_.data_path);
  }

  ModelBundle model() const {
    if (cfg_.model_path.empty()) throw UsageError("--model is required");
    return ModelBundle::load(cfg_.model_path);
  }

  std::pair<EmbeddingStore, HashIndex> index() const {
    if (cfg_.index_path.empty()) throw UsageError("--index is required for hashed modes");
    const fs::path dir = cfg_.index_path;
    return {EmbeddingStore::load(dir / "embeddings.json"), HashIndex::load(dir / "index.json")};
  }

  IndexBuildConfig build_config() const {
    IndexBuildConfig b;
    b.scheme = cfg_.scheme;
    b.profile = cfg_.profile;
    b.hash = cfg_.hash;
    b.seed = seed_;
    b.workers = workers_;
    return b;
  }

  Mode mode(Mode fallback) const { return flags_.mode.empty() ? fallback : parse_mode(flags_.mode); }

  int gen_data() {
    const Dataset d = generate_synthetic(cfg_.generator);
    save_dataset(out_, d);
    diff::write_json_file(out_ / "generator.json", to_json(cfg_.generator));
    log("corpus " + std::to_string(d.corpus.size()) + " queries " + std::to_string(d.queries.size()) +
        " positive_ratio " + format_double(positive_ratio(d)));
    return kOk;
  }

  int train_cmd() {
    cfg_.train.mode = std::get<ScoreMode>(mode(cfg_.train.mode));
    try {
      cfg_.train.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    const Dataset d = data();
    ModelBundle init = ModelBundle::init(d, cfg_.model, seed_);
    TrainHistory history;
    TrainOptions opts;
    opts.checkpoint = out_ / "checkpoint.json";
    opts.log = [this](const std::string& line) { log(line); };
    const ModelBundle trained = train(std::move(init), d, cfg_.train, &history, opts);
    trained.save(out_ / "model.json");
    history.write_csv(out_ / "history.csv");
    json summary = {{"mode", to_string(cfg_.train.mode)},
                    {"initial_val_map", history.initial_val_map},
                    {"best_val_map", history.best_val_map},
                    {"best_epoch", history.best_epoch},
                    {"stopped_early", history.stopped_early},
                    {"diverged", history.diverged},
                    {"gamma", trained.gamma},
                    {"gamma_sweep", history.gamma_sweep}};
    if (history.diverged) summary["divergence"] = history.divergence;
    diff::write_json_file(out_ / "train_summary.json", summary);
    diff::write_json_file(out_ / "run.json", cfg_.to_json());
    log("best val_map " + format_double(history.best_val_map) + " at epoch " + std::to_string(history.best_epoch));
    return kOk;
  }

  int build_index_cmd() {
    const Dataset d = data();
    const ModelBundle b = model();
    BuildReport rep;
    const BuiltIndex built = build_index(b, corpus_pointers(d), build_config(), &rep);
    built.embeddings.save(out_ / "embeddings.json");
    built.index.save(out_ / "index.json");
    std::vector<HashCode> codes;
    for (const auto& [id, c] : built.index.codes()) codes.push_back(c);
    json report = {{"scheme", to_string(cfg_.scheme)},
                   {"tables", cfg_.profile.tables},
                   {"bits", cfg_.profile.bits},
                   {"sequences", rep.sequences},
                   {"fallback_ids", rep.fallback_ids},
                   {"per_bit_balance", per_bit_balance(codes)}};
    if (!rep.hash.objective.empty()) report["hash_objective"] = rep.hash.objective.back();
    diff::write_json_file(out_ / "build.json", report);
    log("indexed " + std::to_string(rep.sequences) + " sequences, per-bit balance " +
        format_double(report["per_bit_balance"].get<double>()));
    return kOk;
  }

  // Retriever for a retrieval mode; the index is only loaded when needed.
  struct Loaded {
    Dataset data;
    ModelBundle bundle;
    std::optional<EmbeddingStore> embeddings;
    std::optional<HashIndex> index;
  };

  Loaded load_for(RetrievalMode m) const {
    Loaded l{data(), model(), std::nullopt, std::nullopt};
    if (m != RetrievalMode::Exhaustive) {
      auto [e, i] = index();
      l.embeddings = std::move(e);
      l.index = std::move(i);
    }
    return l;
  }

  int query_cmd() {
    Mode m = mode(RetrievalMode::Telescopic);
    RetrievalConfig rc = cfg_.retrieval;
    RetrievalMode rm;
    if (const auto* s = std::get_if<ScoreMode>(&m)) {
      rc.exhaustive_scorer = *s;
      rm = RetrievalMode::Exhaustive;
    } else {
      rm = std::get<RetrievalMode>(m);
    }
    const Loaded l = load_for(rm);
    std::vector<std::string> ids = flags_.query.empty() ? split_queries(l.data, cfg_.split) : flags_.query;
    const Retriever r(l.bundle, l.data.corpus, l.embeddings ? &*l.embeddings : nullptr, l.index ? &*l.index : nullptr, rc);
    std::vector<RetrievalResult> results;
    for (const auto& id : ids) results.push_back(r.retrieve(l.data.query_at(id), cfg_.k, rm));
    write_results_csv(out_ / "results.csv", results);
    log("retrieved top " + std::to_string(cfg_.k) + " for " + std::to_string(results.size()) + " queries with " +
        mode_name(m));
    return kOk;
  }

  int evaluate_cmd() {
    const Mode m = mode(cfg_.train.mode);
    if (const auto* s = std::get_if<ScoreMode>(&m)) {
      const Dataset d = data();
      const ModelBundle b = model();
      const MetricReport rep = evaluate_bundle(b, d, split_queries(d, cfg_.split), *s, cfg_.evaluate);
      write_report(rep, {{"mode", mode_name(m)}});
      return kOk;
    }
    const RetrievalMode rm = std::get<RetrievalMode>(m);
    const Loaded l = load_for(rm);
    const Retriever r(l.bundle, l.data.corpus, l.embeddings ? &*l.embeddings : nullptr, l.index ? &*l.index : nullptr,
                      cfg_.retrieval);
    const RetrievalReport rep =
        evaluate_retrieval(r, l.data, split_queries(l.data, cfg_.split), rm, cfg_.evaluate.ks, workers_);
    json extra = {{"mode", mode_name(m)}, {"mean_comparisons", rep.mean_comparisons}, {"reduction", rep.reduction}};
    for (const auto& [stage, n] : rep.stages) extra["stages"][to_string(stage)] = n;
    write_report(rep.metrics, extra);
    return kOk;
  }

  void write_report(const MetricReport& rep, const json& extra) {
    json j = rep.to_json();
    for (const auto& [k, v] : extra.items()) j[k] = v;
    diff::write_json_file(out_ / "report.json", j);
    rep.write_csv(out_ / "report.csv");
    rep.write_per_query_csv(out_ / "per_query_ap.csv");
    for (const auto& [name, value] : rep.metrics) log(name + " " + format_double(value));
  }

  int bench_hash_cmd() {
    const Dataset d = data();
    const ModelBundle b = model();
    const std::vector<std::string> queries = split_queries(d, cfg_.split);
    const IndexBuildConfig base = build_config();
    const EmbeddingStore store = embed_corpus(b, corpus_pointers(d), workers_);
    // One hasher for the whole sweep; only the table layout changes.
    const Hasher hasher = make_hasher(store, base);

    const Retriever exhaustive(b, d.corpus, &store, nullptr, cfg_.retrieval);
    const double full = evaluate_retrieval(exhaustive, d, queries, RetrievalMode::Exhaustive, {10}, workers_).metrics.ndcg(10);
    log("exhaustive ndcg@10 " + format_double(full));

    std::ostringstream csv;
    csv << "scheme,tables,bits,reduction_factor,ndcg@10,mean_comparisons\n";
    for (std::size_t m : {1, 2, 4}) {
      for (std::size_t l : {4, 6, 8}) {
        IndexBuildConfig c = base;
        c.profile = {m, l};
        const HashIndex idx = index_embeddings(store, hasher, c);
        const Retriever r(b, d.corpus, &store, &idx, cfg_.retrieval);
        const RetrievalReport rep = evaluate_retrieval(r, d, queries, RetrievalMode::HashedSelf, {10}, workers_);
        csv << to_string(cfg_.scheme) << ',' << m << ',' << l << ',' << format_double(rep.reduction) << ','
            << format_double(rep.metrics.ndcg(10)) << ',' << format_double(rep.mean_comparisons) << '\n';
        log("M=" + std::to_string(m) + " L=" + std::to_string(l) + " reduction " + format_double(rep.reduction) +
            " ndcg@10 " + format_double(rep.metrics.ndcg(10)));
      }
    }
    write_text(out_ / "bench_hash.csv", csv.str());
    return kOk;
  }

  std::string command_;
  const Flags& flags_;
  std::ostream& log_;
  RunConfig cfg_;
  std::uint64_t seed_ = kDefaultSeed;
  std::size_t workers_ = 1;
  fs::path out_;
};

}  // namespace

json RunConfig::to_json() const {
  json j = {{"generator", seqret::to_json(generator)},
            {"model", seqret::to_json(model)},
            {"train", seqret::to_json(train)},
            {"hash", seqret::to_json(hash)},
            {"index", {{"scheme", to_string(scheme)}, {"profile", {{"tables", profile.tables}, {"bits", profile.bits}}}}},
            {"evaluate", seqret::to_json(evaluate)},
            {"retrieval",
             {{"exhaustive_scorer", to_string(retrieval.exhaustive_scorer)},
              {"rerank_scorer", to_string(retrieval.rerank_scorer)}}},
            {"k", k},
            {"split", split},
            {"paths", {{"data", data_path}, {"model", model_path}, {"index", index_path}}}};
  if (seed) j["seed"] = *seed;
  if (workers) j["workers"] = *workers;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j,
                 {"seed", "workers", "generator", "model", "train", "hash", "index", "evaluate", "retrieval", "k",
                  "split", "paths"},
                 "config");
  RunConfig c;
  if (j.contains("seed")) {
    std::uint64_t s = 0;
    read_key(j, "seed", s, "config");
    c.seed = s;
  }
  if (j.contains("workers")) {
    std::size_t w = 0;
    read_key(j, "workers", w, "config");
    c.workers = w;
  }
  if (j.contains("generator")) c.generator = generator_config_from_json(j["generator"]);
  if (j.contains("model")) c.model = bundle_config_from_json(j["model"]);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  if (j.contains("hash")) c.hash = hash_train_config_from_json(j["hash"]);
  if (j.contains("evaluate")) c.evaluate = protocol_config_from_json(j["evaluate"]);
  if (j.contains("index")) {
    const json& ix = j["index"];
    reject_unknown(ix, {"scheme", "profile"}, "index");
    std::string scheme = to_string(c.scheme);
    read_key(ix, "scheme", scheme, "index");
    c.scheme = parse_hash_scheme(scheme);
    if (ix.contains("profile")) c.profile = profile_from_json(ix["profile"]);
  }
  if (j.contains("retrieval")) {
    const json& r = j["retrieval"];
    reject_unknown(r, {"exhaustive_scorer", "rerank_scorer"}, "retrieval");
    std::string ex = to_string(c.retrieval.exhaustive_scorer), re = to_string(c.retrieval.rerank_scorer);
    read_key(r, "exhaustive_scorer", ex, "retrieval");
    read_key(r, "rerank_scorer", re, "retrieval");
    c.retrieval.exhaustive_scorer = parse_score_mode(ex);
    c.retrieval.rerank_scorer = parse_score_mode(re);
  }
  read_key(j, "k", c.k, "config");
  read_key(j, "split", c.split, "config");
  if (j.contains("paths")) {
    const json& p = j["paths"];
    reject_unknown(p, {"data", "model", "index"}, "paths");
    read_key(p, "data", c.data_path, "paths");
    read_key(p, "model", c.model_path, "paths");
    read_key(p, "index", c.index_path, "paths");
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("config file not found: " + path.string());
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("malformed config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Similarity search over continuous-time event sequences", "seqret"};
  app.require_subcommand(1);
  Flags flags;

  auto add_common = [&flags](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON run configuration");
    sub->add_option("--seed", flags.seed, "run seed (default " + std::to_string(kDefaultSeed) + ")");
    sub->add_option("--workers", flags.workers, "worker threads (default 1)");
    sub->add_option("--out", flags.out, "output directory")->required();
  };
  auto add_inputs = [&flags](CLI::App* sub, bool model, bool index) {
    sub->add_option("--data", flags.data, "dataset directory");
    if (model) sub->add_option("--model", flags.model, "model bundle file");
    if (index) sub->add_option("--index", flags.index, "index directory");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
  add_common(gen);

  CLI::App* tr = app.add_subcommand("train", "train a model bundle");
  add_common(tr);
  add_inputs(tr, false, false);
  tr->add_option("--mode", flags.mode, "selfattn, crossattn or hash_nsr");

  CLI::App* bi = app.add_subcommand("build-index", "embed the corpus and build the hash index");
  add_common(bi);
  add_inputs(bi, true, false);
  bi->add_option("--scheme", flags.scheme, "rh or learned");

  CLI::App* q = app.add_subcommand("query", "retrieve the top k corpus sequences");
  add_common(q);
  add_inputs(q, true, true);
  q->add_option("--mode", flags.mode, "exhaustive, hashed_self, telescopic or a scorer");
  q->add_option("--k", flags.k, "results per query");
  q->add_option("--query", flags.query, "query id (repeatable; default: every query of --split)");
  q->add_option("--split", flags.split, "train, val, test or all");

  CLI::App* ev = app.add_subcommand("evaluate", "ranking metrics on a query split");
  add_common(ev);
  add_inputs(ev, true, true);
  ev->add_option("--mode", flags.mode, "a scorer (protocol run) or a retrieval mode");
  ev->add_option("--split", flags.split, "train, val, test or all");

  CLI::App* bh = app.add_subcommand("bench-hash", "NDCG@10 against reduction factor over (M, L)");
  add_common(bh);
  add_inputs(bh, true, false);
  bh->add_option("--scheme", flags.scheme, "rh or learned");
  bh->add_option("--split", flags.split, "train, val, test or all");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "seqret: usage error: " << one_line(e.what()) << '\n';
    return kUsage;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  try {
    Runner runner(chosen->get_name(), flags, out);
    return runner.execute();
  } catch (const UsageError& e) {
    err << "seqret: usage error: " << one_line(e.what()) << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "seqret: error: " << one_line(e.what()) << '\n';
    return kFailure;
  }
}

}  // namespace seqret::cli
