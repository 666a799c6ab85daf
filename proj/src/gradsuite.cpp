#include <cmath>

#include "json.hpp"

#include "spg/grouping.hpp"
#include "spg/harness.hpp"
#include "spg/head.hpp"
#include "spg/matching.hpp"
#include "spg/nn.hpp"
#include "spg/voting.hpp"
#include "spg/voxel_grid.hpp"

namespace spg {

namespace {

Matrix random_matrix(Rng& rng, Index rows, Index cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Keeps values at least `gap` away from zero (the elu kink).
Matrix away_from_zero(Matrix m, double gap) {
  for (Index i = 0; i < m.size(); ++i)
    if (std::abs(m.data()[i]) < gap) m.data()[i] = m.data()[i] < 0 ? -gap : gap;
  return m;
}

std::vector<std::int64_t> random_labels(Rng& rng, std::size_t n, Index groups) {
  std::vector<std::int64_t> out(n);
  for (auto& v : out) v = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(groups)));
  return out;
}

// Randomizes norm gains and shifts so they do not sit at their init values.
void jitter_norms(ParamStore& store, Rng& rng) {
  for (const auto& [name, value] : store.entries()) {
    if (name.ends_with(".gain")) store.set(name, random_matrix(rng, 1, value.cols(), 0.5, 1.5));
    if (name.ends_with(".shift")) store.set(name, random_matrix(rng, 1, value.cols(), -0.5, 0.5));
  }
}

using ModuleFn = std::function<ad::Var(ParamBinder&, std::span<const ad::Var>)>;

// Checks a module with respect to its explicit inputs and every parameter.
GradCheckReport check_module(const ParamStore& store, const std::vector<Matrix>& inputs, const ModuleFn& body) {
  std::vector<std::string> names;
  std::vector<Matrix> all = inputs;
  for (const auto& [name, value] : store.entries()) {
    names.push_back(name);
    all.push_back(value);
  }
  const std::size_t n = inputs.size();
  const DiffFn fn = [&](ad::Tape& tape, std::span<const ad::Var> vars) {
    ParamBinder p(tape, store);
    for (std::size_t i = 0; i < names.size(); ++i) p.bind(names[i], vars[n + i]);
    return body(p, vars.first(n));
  };
  return finite_diff_check(fn, all);
}

struct Case {
  const char* op;
  std::function<GradCheckReport(Rng&)> run;
};

std::vector<Case> cases() {
  std::vector<Case> c;
  c.push_back({"linear", [](Rng& rng) {
                 return finite_diff_check(
                     [](ad::Tape&, std::span<const ad::Var> v) { return ad::linear(v[0], v[1], v[2]); },
                     {random_matrix(rng, 4, 3), random_matrix(rng, 3, 5), random_matrix(rng, 1, 5)});
               }});
  c.push_back({"elu", [](Rng& rng) {
                 return finite_diff_check([](ad::Tape&, std::span<const ad::Var> v) { return ad::elu(v[0]); },
                                          {away_from_zero(random_matrix(rng, 5, 4, -2, 2), 1e-2)});
               }});
  c.push_back({"sigmoid", [](Rng& rng) {
                 return finite_diff_check([](ad::Tape&, std::span<const ad::Var> v) { return ad::sigmoid(v[0]); },
                                          {random_matrix(rng, 4, 3, -3, 3)});
               }});
  c.push_back({"layer_norm", [](Rng& rng) {
                 return finite_diff_check(
                     [](ad::Tape&, std::span<const ad::Var> v) { return ad::layer_norm(v[0], v[1], v[2]); },
                     {random_matrix(rng, 4, 6, -2, 2), random_matrix(rng, 1, 6, 0.5, 1.5), random_matrix(rng, 1, 6)});
               }});
  c.push_back({"softmax_groups", [](Rng& rng) {
                 return finite_diff_check(
                     [](ad::Tape&, std::span<const ad::Var> v) { return ad::softmax_groups(v[0], 3); },
                     {random_matrix(rng, 9, 2, -2, 2)});
               }});
  c.push_back({"scatter_mean", [](Rng& rng) {
                 const auto labels = random_labels(rng, 10, 4);
                 return finite_diff_check(
                     [labels](ad::Tape&, std::span<const ad::Var> v) { return scatter_mean(v[0], labels, 4); },
                     {random_matrix(rng, 10, 3)});
               }});
  c.push_back({"broadcast", [](Rng& rng) {
                 const auto labels = random_labels(rng, 10, 4);
                 return finite_diff_check(
                     [labels](ad::Tape&, std::span<const ad::Var> v) { return broadcast(v[0], labels); },
                     {random_matrix(rng, 4, 3)});
               }});
  c.push_back({"sparse_conv3", [](Rng& rng) {
                 std::vector<Coord> coords;
                 for (int z = 0; z < 4; ++z)
                   for (int y = 0; y < 4; ++y)
                     for (int x = 0; x < 4; ++x)
                       if (rng.uniform() < 0.4) coords.push_back({x, y, z});
                 if (coords.empty()) coords.push_back({0, 0, 0});
                 const ConvRulebook rules = build_rulebook(coords, 3);
                 const auto n = static_cast<Index>(coords.size());
                 return finite_diff_check(
                     [rules](ad::Tape&, std::span<const ad::Var> v) { return sparse_conv3(v[0], v[1], v[2], rules); },
                     {random_matrix(rng, n, 3), random_matrix(rng, 27 * 3, 2), random_matrix(rng, 1, 2)});
               }});
  c.push_back({"vote_branch", [](Rng& rng) {
                 ParamStore store;
                 add_vote_branch(store, 4, rng);
                 jitter_norms(store, rng);
                 return check_module(store, {random_matrix(rng, 6, 4), random_matrix(rng, 6, 3)},
                                     [](ParamBinder& p, std::span<const ad::Var> v) {
                                       const VoteOutput out = vote_branch(p, v[0]);
                                       const VoteSet votes = apply_votes(v[1], v[0], out);
                                       const ad::Var parts[2] = {votes.positions, votes.features};
                                       return ad::concat_cols(parts);
                                     });
               }});
  for (const AttentionReduction reduction : {AttentionReduction::kChannelSum, AttentionReduction::kPerChannel}) {
    const char* name = reduction == AttentionReduction::kChannelSum ? "superpoint_attention"
                                                                     : "superpoint_attention_per_channel";
    c.push_back({name, [reduction](Rng& rng) {
                   ParamStore store;
                   add_attention(store, "attn", 5, 4, rng);
                   jitter_norms(store, rng);
                   const AttentionOptions opts{AttentionMode::kFull, reduction, 1e-5};
                   return check_module(store, {random_matrix(rng, 6, 3), random_matrix(rng, 6, 5)},
                                       [opts](ParamBinder& p, std::span<const ad::Var> v) {
                                         const NeighbourTable nb = knn_superpoints(v[0].value(), 3);
                                         const SuperpointState s{v[0], v[1], 0};
                                         return superpoint_attention(p, "attn", s, nb, opts).features;
                                       });
                 }});
  }
  c.push_back({"superpoint_voxel_fusion", [](Rng& rng) {
                 ParamStore store;
                 add_fusion(store, "fusion", 3, 2, 4, 3, rng);
                 jitter_norms(store, rng);
                 const Index e = 16;
                 const Index l = 4;
                 const auto labels = random_labels(rng, static_cast<std::size_t>(e), l);
                 const Matrix positions = random_matrix(rng, e, 3, 0.0, 0.15);
                 return check_module(store, {random_matrix(rng, e, 3), random_matrix(rng, l, 2)},
                                     [=](ParamBinder& p, std::span<const ad::Var> v) {
                                       MergedSet m;
                                       m.positions = p.tape().constant(positions);
                                       m.features = v[0];
                                       m.labels = labels;
                                       m.seed_count = e;
                                       const SuperpointState s{p.tape().constant(Matrix::Zero(l, 3)), v[1], 0};
                                       return superpoint_voxel_fusion(p, "fusion", s, m, FusionOptions{0.04, 3, 1e-5});
                                     });
               }});
  c.push_back({"init_hidden", [](Rng& rng) {
                 const Index e = 12;
                 const auto labels = random_labels(rng, static_cast<std::size_t>(e), 3);
                 SceneFrame frame{Vec3(-1, -1, 0), Vec3(2, 2, 1.5), Vec3(-1, -1, 0)};
                 return finite_diff_check(
                     [=](ad::Tape&, std::span<const ad::Var> v) {
                       MergedSet m;
                       m.positions = v[0];
                       m.features = v[1];
                       m.labels = labels;
                       m.seed_count = e;
                       return init_hidden(m, 3, frame).hidden;
                     },
                     {random_matrix(rng, e, 3), random_matrix(rng, e, 4)});
               }});
  c.push_back({"head_forward", [](Rng& rng) {
                 ParamStore store;
                 add_head(store, 7, 6, 3, rng);
                 jitter_norms(store, rng);
                 return check_module(store, {random_matrix(rng, 5, 7)}, [](ParamBinder& p, std::span<const ad::Var> v) {
                   const HeadOutput h = head_forward(p, v[0]);
                   const ad::Var parts[3] = {h.class_logits, h.reg_raw, h.centerness_logit};
                   return ad::concat_cols(parts);
                 });
               }});
  c.push_back({"decode_boxes", [](Rng& rng) {
                 return finite_diff_check(
                     [](ad::Tape&, std::span<const ad::Var> v) { return decode_boxes(v[0], v[1]); },
                     {random_matrix(rng, 4, 3), random_matrix(rng, 4, 6)});
               }});
  c.push_back({"diou_loss", [](Rng& rng) {
                 Matrix boxes(5, 6);
                 boxes.leftCols(3) = random_matrix(rng, 5, 3, -0.5, 0.5);
                 boxes.rightCols(3) = random_matrix(rng, 5, 3, 0.3, 1.5);
                 std::vector<Box3> targets;
                 for (int i = 0; i < 4; ++i) {
                   Box3 b;
                   b.center = random_matrix(rng, 3, 1, -0.5, 0.5);
                   b.size = random_matrix(rng, 3, 1, 0.3, 1.5);
                   targets.push_back(b);
                 }
                 const std::vector<std::int64_t> rows{0, 1, 3, 4};
                 return finite_diff_check(
                     [=](ad::Tape&, std::span<const ad::Var> v) { return diou_loss(v[0], rows, targets); }, {boxes});
               }});
  c.push_back({"sigmoid_focal_loss", [](Rng& rng) {
                 Matrix targets = Matrix::Zero(5, 3);
                 for (Index i = 0; i < 5; ++i)
                   if (rng.uniform() < 0.6) targets(i, static_cast<Index>(rng.below(3))) = 1.0;
                 return finite_diff_check(
                     [=](ad::Tape&, std::span<const ad::Var> v) { return sigmoid_focal_loss(v[0], targets, 0.25, 2.0, 2.0); },
                     {random_matrix(rng, 5, 3, -3, 3)});
               }});
  c.push_back({"centerness_loss", [](Rng& rng) {
                 const std::vector<std::int64_t> rows{0, 2, 3};
                 const std::vector<double> targets{rng.uniform(), rng.uniform(), rng.uniform()};
                 return finite_diff_check(
                     [=](ad::Tape&, std::span<const ad::Var> v) { return centerness_loss(v[0], rows, targets); },
                     {random_matrix(rng, 5, 1, -3, 3)});
               }});
  c.push_back({"vote_loss", [](Rng& rng) {
                 const Matrix seeds = random_matrix(rng, 10, 3, -1, 1);
                 std::vector<LabeledBox> boxes(2);
                 boxes[0].box = Box3{Vec3(-0.5, -0.5, 0), Vec3(1.2, 1.2, 2.2)};
                 boxes[1].box = Box3{Vec3(0.5, 0.5, 0), Vec3(1.2, 1.2, 2.2)};
                 return finite_diff_check(
                     [=](ad::Tape&, std::span<const ad::Var> v) { return vote_loss(v[0], seeds, boxes).loss; },
                     {random_matrix(rng, 10, 3, -1.5, 1.5)});
               }});
  return c;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(int instances, std::uint64_t seed) {
  std::vector<GradSuiteEntry> out;
  for (const Case& c : cases()) {
    for (int i = 0; i < instances; ++i) {
      const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(out.size()));
      Rng rng(s);
      out.push_back({c.op, s, c.run(rng)});
    }
  }
  return out;
}

std::string gradient_suite_json(const std::vector<GradSuiteEntry>& entries, double tol) {
  nlohmann::ordered_json j;
  bool all = true;
  j["tolerance"] = tol;
  j["checks"] = nlohmann::ordered_json::array();
  for (const GradSuiteEntry& e : entries) {
    const bool ok = e.report.passed(tol);
    all = all && ok;
    j["checks"].push_back({{"op", e.op},
                           {"seed", e.instance_seed},
                           {"max_rel_error", e.report.max_rel_error},
                           {"coordinates", e.report.coordinates},
                           {"passed", ok}});
  }
  j["passed"] = all;
  return j.dump(1);
}

}  // namespace spg
