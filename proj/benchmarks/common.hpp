#pragma once

#include "seqret/generator.hpp"
#include "seqret/retrieval.hpp"
#include "seqret/train.hpp"

namespace bench {

// A mid-sized corpus with default model sizes; built once per process.
inline seqret::Dataset bench_data() {
  seqret::GeneratorConfig g;
  g.n_base = 32;
  g.seed = 1;
  return seqret::generate_synthetic(g);
}

// A mid-sized corpus with default model sizes; built once per process.
struct World {
  seqret::Dataset data = bench_data();
  seqret::ModelBundle bundle = seqret::ModelBundle::init(data, seqret::BundleConfig{}, 1);
  std::vector<const seqret::EventSequence*> corpus = seqret::corpus_pointers(data);

  static const World& get() {
    static const World w;
    return w;
  }
};

}  // namespace bench
