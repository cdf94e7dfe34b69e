#include "seqret/config_io.hpp"

#include <set>

#include "seqret/errors.hpp"

namespace seqret {

using nlohmann::json;

namespace {

// Reads known keys into fields and complains about anything left over.
class Reader {
 public:
  Reader(const json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j_.is_object()) throw ConfigError(what_ + " must be a JSON object");
  }

  template <typename T>
  Reader& get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return *this;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(what_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  template <typename T, typename Parse>
  Reader& get_as(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (j_.contains(key)) out = parse(s);
    return *this;
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + k + "' in " + what_);
    }
  }

 private:
  const json& j_;
  std::string what_;
  std::set<std::string> seen_;
};

Rectifier parse_rectifier(const std::string& s) {
  if (s == "softplus") return Rectifier::Softplus;
  if (s == "relu") return Rectifier::Relu;
  throw ConfigError("unknown rectifier '" + s + "'");
}

HiddenActivation parse_activation(const std::string& s) {
  if (s == "tanh") return HiddenActivation::Tanh;
  if (s == "relu") return HiddenActivation::Relu;
  throw ConfigError("unknown activation '" + s + "'");
}

AttentionMode parse_attention(const std::string& s) {
  if (s == "self") return AttentionMode::Self;
  if (s == "cross") return AttentionMode::Cross;
  throw ConfigError("unknown attention mode '" + s + "'");
}

}  // namespace

json to_json(const GeneratorConfig& c) {
  return {{"n_base", c.n_base},
          {"subseqs_min", c.subseqs_min},
          {"subseqs_max", c.subseqs_max},
          {"mark_vocab", c.mark_vocab},
          {"mean_len", c.mean_len},
          {"length_spread", c.length_spread},
          {"warp", to_string(c.warp)},
          {"scale_min", c.scale_min},
          {"scale_max", c.scale_max},
          {"power_min", c.power_min},
          {"power_max", c.power_max},
          {"shift_fraction", c.shift_fraction},
          {"mean_interarrival", c.mean_interarrival},
          {"dirichlet_alpha", c.dirichlet_alpha},
          {"seed", c.seed},
          {"max_len", c.max_len}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig c;
  Reader r(j, "generator");
  r.get("n_base", c.n_base)
      .get("subseqs_min", c.subseqs_min)
      .get("subseqs_max", c.subseqs_max)
      .get("mark_vocab", c.mark_vocab)
      .get("mean_len", c.mean_len)
      .get("length_spread", c.length_spread)
      .get_as("warp", c.warp, parse_warp_family)
      .get("scale_min", c.scale_min)
      .get("scale_max", c.scale_max)
      .get("power_min", c.power_min)
      .get("power_max", c.power_max)
      .get("shift_fraction", c.shift_fraction)
      .get("mean_interarrival", c.mean_interarrival)
      .get("dirichlet_alpha", c.dirichlet_alpha)
      .get("seed", c.seed)
      .get("max_len", c.max_len)
      .finish();
  c.validate();
  return c;
}

json to_json(const MtppConfig& c) {
  return {{"dim", c.dim},
          {"vocab", c.vocab},
          {"max_len", c.max_len},
          {"blocks", c.blocks},
          {"dropout", c.dropout},
          {"time_scale", c.time_scale},
          {"delta_scale", c.delta_scale},
          {"mode", to_string(c.mode)}};
}

MtppConfig mtpp_config_from_json(const json& j) {
  MtppConfig c;
  Reader r(j, "mtpp");
  r.get("dim", c.dim)
      .get("vocab", c.vocab)
      .get("max_len", c.max_len)
      .get("blocks", c.blocks)
      .get("dropout", c.dropout)
      .get("time_scale", c.time_scale)
      .get("delta_scale", c.delta_scale)
      .get_as("mode", c.mode, parse_attention)
      .finish();
  c.validate();
  return c;
}

json to_json(const UnwarpConfig& c) {
  return {{"hidden", c.hidden},
          {"quadrature_order", c.quadrature_order},
          {"sigma", c.sigma},
          {"noise", c.noise},
          {"rectifier", c.rectifier == Rectifier::Relu ? "relu" : "softplus"},
          {"activation", c.activation == HiddenActivation::Relu ? "relu" : "tanh"},
          {"input_scale", c.input_scale},
          {"floor", c.floor}};
}

UnwarpConfig unwarp_config_from_json(const json& j) {
  UnwarpConfig c;
  Reader r(j, "unwarp");
  r.get("hidden", c.hidden)
      .get("quadrature_order", c.quadrature_order)
      .get("sigma", c.sigma)
      .get("noise", c.noise)
      .get_as("rectifier", c.rectifier, parse_rectifier)
      .get_as("activation", c.activation, parse_activation)
      .get("input_scale", c.input_scale)
      .get("floor", c.floor)
      .finish();
  if (c.hidden == 0) throw ConfigError("unwarp.hidden must be positive");
  if (!(c.sigma > 0.0)) throw ConfigError("unwarp.sigma must be positive");
  return c;
}

json to_json(const FisherConfig& c) {
  return {{"subset", c.subset}, {"mode", to_string(c.mode)}, {"damping", c.damping}, {"max_samples", c.max_samples}};
}

FisherConfig fisher_config_from_json(const json& j) {
  FisherConfig c;
  Reader r(j, "fisher");
  r.get("subset", c.subset)
      .get_as("mode", c.mode, parse_fisher_mode)
      .get("damping", c.damping)
      .get("max_samples", c.max_samples)
      .finish();
  c.validate();
  return c;
}

json to_json(const BundleConfig& c) {
  return {{"mtpp", to_json(c.mtpp)},
          {"unwarp", to_json(c.unwarp)},
          {"fisher", to_json(c.fisher)},
          {"gamma", c.gamma},
          {"data_scaled_inputs", c.data_scaled_inputs}};
}

BundleConfig bundle_config_from_json(const json& j) {
  BundleConfig c;
  Reader r(j, "model");
  if (const json* m = r.sub("mtpp")) c.mtpp = mtpp_config_from_json(*m);
  if (const json* u = r.sub("unwarp")) c.unwarp = unwarp_config_from_json(*u);
  if (const json* f = r.sub("fisher")) c.fisher = fisher_config_from_json(*f);
  r.get("gamma", c.gamma).get("data_scaled_inputs", c.data_scaled_inputs).finish();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"optimization", to_string(c.optimization)},
          {"margin", c.margin},
          {"gamma", c.gamma},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"negatives", c.negatives},
          {"max_pairs", c.max_pairs},
          {"l2", c.l2},
          {"dropout", c.dropout},
          {"patience", c.patience},
          {"mle_epochs", c.mle_epochs},
          {"mle_batch", c.mle_batch},
          {"gamma_grid", c.gamma_grid},
          {"val_negatives", c.val_negatives},
          {"seed", c.seed},
          {"workers", c.workers}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  Reader r(j, "train");
  r.get_as("mode", c.mode, parse_score_mode)
      .get_as("optimization", c.optimization, parse_optimization)
      .get("margin", c.margin)
      .get("gamma", c.gamma)
      .get("lr", c.lr)
      .get("epochs", c.epochs)
      .get("batch_size", c.batch_size)
      .get("negatives", c.negatives)
      .get("max_pairs", c.max_pairs)
      .get("l2", c.l2)
      .get("dropout", c.dropout)
      .get("patience", c.patience)
      .get("mle_epochs", c.mle_epochs)
      .get("mle_batch", c.mle_batch)
      .get("gamma_grid", c.gamma_grid)
      .get("val_negatives", c.val_negatives)
      .get("seed", c.seed)
      .get("workers", c.workers)
      .finish();
  c.validate();
  return c;
}

json to_json(const HashTrainConfig& c) {
  return {{"eta", {c.weights.eta1, c.weights.eta2, c.weights.eta3}},
          {"code_length", c.code_length},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"center_inputs", c.center_inputs},
          {"seed", c.seed}};
}

HashTrainConfig hash_train_config_from_json(const json& j) {
  HashTrainConfig c;
  Reader r(j, "hash");
  std::vector<double> eta = {c.weights.eta1, c.weights.eta2, c.weights.eta3};
  r.get("eta", eta)
      .get("code_length", c.code_length)
      .get("epochs", c.epochs)
      .get("lr", c.lr)
      .get("center_inputs", c.center_inputs)
      .get("seed", c.seed)
      .finish();
  if (eta.size() != 3) throw ConfigError("hash.eta needs exactly three weights");
  c.weights = {eta[0], eta[1], eta[2]};
  c.validate();
  return c;
}

json to_json(const ProtocolConfig& c) {
  return {{"ks", c.ks}, {"negatives", c.negatives}, {"seed", c.seed}, {"workers", c.workers}};
}

ProtocolConfig protocol_config_from_json(const json& j) {
  ProtocolConfig c;
  Reader r(j, "evaluate");
  r.get("ks", c.ks).get("negatives", c.negatives).get("seed", c.seed).get("workers", c.workers).finish();
  if (c.ks.empty()) throw ConfigError("evaluate.ks must not be empty");
  return c;
}

json to_json(const FisherStats& s) { return {{"names", s.names}, {"mean_sq", s.mean_sq}, {"samples", s.samples}}; }

FisherStats fisher_stats_from_json(const json& j) {
  FisherStats s;
  try {
    s.names = j.at("names").get<std::vector<std::string>>();
    s.mean_sq = j.at("mean_sq").get<std::vector<double>>();
    s.samples = j.at("samples").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed Fisher statistics: ") + e.what());
  }
  return s;
}

}  // namespace seqret
