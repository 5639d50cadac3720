#include "stemvq/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "stemvq/ops.hpp"
#include "stemvq/random.hpp"
#include "stemvq/vqvae.hpp"

namespace stemvq {

template <class S>
std::vector<std::vector<double>> numeric_gradient(const std::function<double()>& f,
                                                  std::vector<BasicTensor<S>> leaves, double h) {
  std::vector<std::vector<double>> grads;
  for (auto& leaf : leaves) {
    auto values = leaf.mutable_data();
    std::vector<double> g(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const S saved = values[i];
      // The representable perturbations, not the nominal 2h, set the divisor.
      const S hi = static_cast<S>(saved + h);
      const S lo = static_cast<S>(saved - h);
      values[i] = hi;
      const double up = f();
      values[i] = lo;
      const double down = f();
      values[i] = saved;
      g[i] = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double relative_error(const std::vector<std::vector<double>>& analytic,
                      const std::vector<std::vector<double>>& numeric) {
  if (analytic.size() != numeric.size()) throw PreconditionError("relative_error: leaf count mismatch");
  double diff = 0, na = 0, nn = 0;
  for (std::size_t l = 0; l < analytic.size(); ++l) {
    if (analytic[l].size() != numeric[l].size()) throw PreconditionError("relative_error: leaf size mismatch");
    for (std::size_t i = 0; i < analytic[l].size(); ++i) {
      const double a = analytic[l][i], n = numeric[l][i];
      diff += (a - n) * (a - n);
      na += a * a;
      nn += n * n;
    }
  }
  const double denom = std::sqrt(std::max(na, nn));
  return denom == 0 ? 0.0 : std::sqrt(diff) / denom;
}

bool GradcheckReport::passed() const {
  return !cases.empty() && std::all_of(cases.begin(), cases.end(), [](const GradcheckCase& c) { return c.passed; });
}

namespace {

constexpr std::size_t kCodebookRows = 4;
// Pre-activations closer than this to the relu kink would make central
// differences straddle it.
constexpr double kKinkMargin = 0.05;

struct GraphSpec {
  std::size_t cin, t, c1, k1, s1, d1, p1;
  PointwiseKind kind;
  std::size_t c2, k2, s2, p2;
};

GraphSpec random_spec(Rng& rng, PointwiseKind kind) {
  for (;;) {
    GraphSpec g{};
    g.cin = 1 + rng.below(3);
    g.t = 6 + rng.below(11);
    g.c1 = 2 + rng.below(2);
    g.k1 = 1 + rng.below(4);
    g.s1 = 1 + rng.below(3);
    g.d1 = 1 + rng.below(2);
    g.p1 = rng.below(3);
    g.kind = kind;
    g.c2 = 2 + rng.below(2);
    g.s2 = 1 + rng.below(3);
    g.k2 = g.s2 + rng.below(3);
    g.p2 = rng.below(2);
    const std::size_t span = g.d1 * (g.k1 - 1) + 1;
    if (g.t + 2 * g.p1 < span) continue;
    const std::size_t t1 = (g.t + 2 * g.p1 - span) / g.s1 + 1;
    if (t1 < 2) continue;
    if (static_cast<std::ptrdiff_t>((t1 - 1) * g.s2 + g.k2) - 2 * static_cast<std::ptrdiff_t>(g.p2) < 2) continue;
    return g;
  }
}

std::string describe(const GraphSpec& g, std::size_t index) {
  static const char* kinds[] = {"relu", "add", "subtract", "scale", "multiply"};
  return "graph" + std::to_string(index) + " conv(" + std::to_string(g.cin) + "->" + std::to_string(g.c1) + " k" +
         std::to_string(g.k1) + " s" + std::to_string(g.s1) + " d" + std::to_string(g.d1) + " p" +
         std::to_string(g.p1) + ") " + kinds[static_cast<int>(g.kind)] + " convT(" + std::to_string(g.c1) + "->" +
         std::to_string(g.c2) + " k" + std::to_string(g.k2) + " s" + std::to_string(g.s2) + " p" +
         std::to_string(g.p2) + ") st-quantizer";
}

template <class S>
BasicTensor<S> random_leaf(Shape shape, Rng& rng, double bound = 1.0) {
  std::vector<S> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<S>(rng.uniform(-bound, bound));
  return BasicTensor<S>::from_data(std::move(shape), std::move(data), true);
}

template <class S>
struct Graph {
  GraphSpec spec;
  BasicTensor<S> x, w1, b1, other, w2, b2, codebook, target;

  std::vector<BasicTensor<S>> leaves() const { return {x, w1, b1, other, w2, b2, codebook, target}; }
};

// Values that are constants in the differentiated function: the selected
// prototype indices and every detached operand, fixed at the base point.
template <class S>
struct Frozen {
  std::optional<std::vector<std::int32_t>> indices;
  std::optional<BasicTensor<S>> st_offset, e, q;

  BasicTensor<S> hold(std::optional<BasicTensor<S>>& slot, const BasicTensor<S>& value) {
    if (!slot) slot = detach(value);
    return *slot;
  }
};

template <class S>
BasicTensor<S> forward(const Graph<S>& g, Frozen<S>& frozen, double* min_relu_input) {
  const auto& s = g.spec;
  auto h = conv1d(g.x, g.w1, g.b1, {s.s1, s.d1, s.p1});
  switch (s.kind) {
    case PointwiseKind::relu: {
      if (min_relu_input) {
        for (S v : h.data()) *min_relu_input = std::min(*min_relu_input, std::abs(static_cast<double>(v)));
      }
      h = relu(h);
      break;
    }
    case PointwiseKind::add: h = add(h, g.other); break;
    case PointwiseKind::subtract: h = subtract(h, g.other); break;
    case PointwiseKind::scale_by_constant: h = scale(h, S(-1.5)); break;
    case PointwiseKind::multiply_elementwise: h = multiply(h, g.other); break;
  }
  auto y = conv1d_transpose(h, g.w2, g.b2, s.s2, s.p2);
  auto e = transpose(y);  // [T2 x C2] latents

  if (!frozen.indices) {
    Codebook<S> cb{detach(g.codebook)};
    frozen.indices = nearest_prototypes(cb, e.data(), e.dim(0));
  }
  auto q = gather_rows(g.codebook, *frozen.indices);
  auto st = add(e, frozen.hold(frozen.st_offset, subtract(q, e)));
  auto recons = mse(st, g.target);
  auto codebook_loss = mse(frozen.hold(frozen.e, e), q);
  auto commit = mse(e, frozen.hold(frozen.q, q));
  return add(add(recons, codebook_loss), scale(commit, S(0.25)));
}

template <class S>
Graph<S> build_graph(const GraphSpec& spec, Rng& rng) {
  Graph<S> g;
  g.spec = spec;
  const std::size_t t1 = conv1d_output_length(spec.t, spec.k1, {spec.s1, spec.d1, spec.p1});
  const std::size_t t2 = conv1d_transpose_output_length(t1, spec.k2, spec.s2, spec.p2);
  g.x = random_leaf<S>({spec.cin, spec.t}, rng);
  g.w1 = random_leaf<S>({spec.c1, spec.cin, spec.k1}, rng, 0.8);
  g.b1 = random_leaf<S>({spec.c1}, rng, 0.5);
  g.other = random_leaf<S>({spec.c1, t1}, rng);
  g.w2 = random_leaf<S>({spec.c1, spec.c2, spec.k2}, rng, 0.8);
  g.b2 = random_leaf<S>({spec.c2}, rng, 0.5);
  g.codebook = random_leaf<S>({kCodebookRows, spec.c2}, rng);
  g.target = random_leaf<S>({t2, spec.c2}, rng);
  return g;
}

template <class S>
GradcheckCase check_graph(const GraphSpec& spec, std::uint64_t seed, std::size_t index) {
  Rng rng(seed);
  Graph<S> g;
  // Redraw values until no relu input sits within the kink margin.
  for (;;) {
    g = build_graph<S>(spec, rng);
    Frozen<S> probe;
    double min_input = std::numeric_limits<double>::infinity();
    NoGradGuard no_grad;
    forward(g, probe, &min_input);
    if (min_input > kKinkMargin) break;
  }

  Frozen<S> frozen;
  auto loss = forward(g, frozen, nullptr);
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : g.leaves()) {
    if (leaf.has_grad()) {
      analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    } else {
      analytic.emplace_back(leaf.numel(), 0.0);
    }
  }
  auto f = [&]() {
    NoGradGuard no_grad;
    return static_cast<double>(forward(g, frozen, nullptr).item());
  };
  const auto numeric = numeric_gradient<S>(f, g.leaves());

  GradcheckCase c;
  c.name = describe(spec, index);
  c.precision = sizeof(S) == sizeof(float) ? "float32" : "float64";
  c.relative_error = relative_error(analytic, numeric);
  c.tolerance = gradcheck_tolerance<S>();
  c.passed = c.relative_error < c.tolerance;
  return c;
}

}  // namespace

GradcheckReport run_gradcheck_suite(std::uint64_t seed, std::size_t graphs) {
  static constexpr PointwiseKind kinds[] = {PointwiseKind::relu, PointwiseKind::add, PointwiseKind::subtract,
                                            PointwiseKind::scale_by_constant, PointwiseKind::multiply_elementwise};
  GradcheckReport report;
  Rng rng(seed);
  for (std::size_t i = 0; i < graphs; ++i) {
    const GraphSpec spec = random_spec(rng, kinds[i % std::size(kinds)]);
    const std::uint64_t value_seed = rng.next_u64();
    report.cases.push_back(check_graph<float>(spec, value_seed, i));
    report.cases.push_back(check_graph<double>(spec, value_seed, i));
  }
  return report;
}

template std::vector<std::vector<double>> numeric_gradient<float>(const std::function<double()>&,
                                                                  std::vector<BasicTensor<float>>, double);
template std::vector<std::vector<double>> numeric_gradient<double>(const std::function<double()>&,
                                                                   std::vector<BasicTensor<double>>, double);

}  // namespace stemvq
