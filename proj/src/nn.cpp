#include "spg/nn.hpp"

namespace spg::nn {

ad::Var linear(ParamBinder& p, const std::string& prefix, ad::Var x) {
  return ad::linear(x, p(prefix + ".weight"), p(prefix + ".bias"));
}

ad::Var norm(ParamBinder& p, const std::string& prefix, ad::Var x, double eps) {
  return ad::layer_norm(x, p(prefix + ".gain"), p(prefix + ".shift"), eps);
}

ad::Var dense_block(ParamBinder& p, const std::string& prefix, ad::Var x, double eps) {
  return ad::elu(norm(p, prefix + ".norm", linear(p, prefix, x), eps));
}

void add_dense_block(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng) {
  add_linear(store, prefix, in, out, rng);
  add_norm(store, prefix + ".norm", out);
}

void add_featurizer(ParamStore& store, Index channels, Rng& rng) {
  add_linear(store, "featurizer.l0", 6, channels, rng);
  add_linear(store, "featurizer.l1", channels, channels, rng);
}

ad::Var featurize(ParamBinder& p, ad::Var inputs) {
  return linear(p, "featurizer.l1", ad::elu(linear(p, "featurizer.l0", inputs)));
}

}  // namespace spg::nn
