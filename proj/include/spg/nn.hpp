#pragma once

#include <string>

#include "spg/autodiff.hpp"
#include "spg/params.hpp"

namespace spg::nn {

// x * W + b using `<prefix>.weight` / `<prefix>.bias`.
ad::Var linear(ParamBinder& p, const std::string& prefix, ad::Var x);
// layer_norm with `<prefix>.gain` / `<prefix>.shift`.
ad::Var norm(ParamBinder& p, const std::string& prefix, ad::Var x, double eps);
// linear -> layer_norm -> elu; norm parameters live under `<prefix>.norm`.
ad::Var dense_block(ParamBinder& p, const std::string& prefix, ad::Var x, double eps);
void add_dense_block(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng);

// Per-voxel stand-in for a sparse backbone: [position, color] (6) -> C -> C.
void add_featurizer(ParamStore& store, Index channels, Rng& rng);
ad::Var featurize(ParamBinder& p, ad::Var inputs);

}  // namespace spg::nn
