#include "stochabs/smallgain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace stochabs {

double GainMatrix::mu_into(int i) const {
  if (!extras || !extras->mu.size()) return 0.0;
  double m = 0.0;
  for (int j = 0; j < N; ++j)
    if (j != i) m = std::max(m, extras->mu(j, i));
  return m;
}

GainMatrix build_gains(const std::vector<QuadSPSF>& spsfs, Flavor flavor,
                       const std::optional<FiniteExtras>& extras,
                       const std::vector<std::vector<int>>& adjacency) {
  const int N = static_cast<int>(spsfs.size());
  GainMatrix G;
  G.N = N;
  G.flavor = flavor;
  G.extras = extras;
  G.entries.assign(static_cast<std::size_t>(N) * N, PowerFn::zero());
  G.sigmas.assign(N, PowerFn::identity());
  if (flavor == Flavor::finite && !extras) throw std::invalid_argument("finite flavor needs extras");
  if (flavor == Flavor::finite &&
      (!extras->delta_tilde_f.is_linear() || !extras->bar_lambda.is_linear()))
    throw std::invalid_argument("finite gain matrix needs linear delta_tilde_f and bar_lambda");

  std::vector<std::vector<bool>> feeds(N, std::vector<bool>(N, adjacency.empty()));
  if (!adjacency.empty()) {
    for (int i = 0; i < N; ++i)
      for (int j : adjacency[i]) feeds[i][j] = true;
  }

  for (int i = 0; i < N; ++i) {
    G.entry(i, i) = spsfs[i].kappa;
    for (int j = 0; j < N; ++j) {
      if (j == i || !feeds[i][j]) continue;
      if (spsfs[i].rho_int.is_zero()) continue;
      if (spsfs[j].alpha.is_zero()) throw std::invalid_argument("non-invertible alpha gain");
      const PowerFn alpha_inv = inverse(spsfs[j].alpha);
      if (flavor == Flavor::infinite || G.mu_into(i) == 0.0) {
        // exactly aligned internal grids need no additive split
        G.entry(i, j) = compose(spsfs[i].rho_int, alpha_inv);
      } else {
        const PowerFn inner = compose(spsfs[i].rho_int, compose(extras->bar_lambda, alpha_inv));
        G.entry(i, j) = compose(plus_identity(extras->delta_tilde_f).fn, inner);
      }
    }
  }
  return G;
}

namespace {

CheckVerdict verdict_from(IdentityVerdict v) {
  switch (v) {
    case IdentityVerdict::below: return CheckVerdict::satisfied;
    case IdentityVerdict::boundary: return CheckVerdict::boundary;
    default: return CheckVerdict::violated;
  }
}

double cycle_score(const PowerFn& f, double tol) {
  const auto v = less_than_identity(f, tol);
  if (v == IdentityVerdict::above) return std::numeric_limits<double>::infinity();
  return f.c;  // linear (or boundary) at this point
}

struct Enumerator {
  const GainMatrix& G;
  double tol;
  CycleReport& rep;
  std::vector<int> path;
  std::vector<bool> on_path;

  Enumerator(const GainMatrix& g, double t, CycleReport& r)
      : G(g), tol(t), rep(r), on_path(g.N, false) {}

  void record(const std::vector<int>& cycle) {
    PowerFn f = PowerFn::identity();
    bool broken = false;
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      const PowerFn& e = G.entry(cycle[k], cycle[(k + 1) % cycle.size()]);
      if (e.is_zero()) { broken = true; break; }
      f = compose(f, e);
    }
    if (broken) return;
    CycleRow row;
    row.vertices = cycle;
    row.composed = f;
    row.verdict = less_than_identity(f, tol);
    rep.rows.push_back(row);
    const CheckVerdict cv = verdict_from(row.verdict);
    auto severity = [](CheckVerdict c) { return c == CheckVerdict::violated ? 2 : (c == CheckVerdict::boundary ? 1 : 0); };
    if (severity(cv) > severity(rep.verdict)) rep.verdict = cv;
    bool better = rep.witness.empty();
    if (!better) {
      const double sc = cycle_score(f, tol);
      const double best = cycle_score(rep.witness_fn, tol);
      const double near = 1e-12 * std::max(1.0, std::min(std::abs(sc), std::abs(best)));
      if (sc > best + near) better = true;
      // shortest witness among effectively equal scores
      else if (sc >= best - near && cycle.size() < rep.witness.size()) better = true;
    }
    if (better) {
      rep.witness = cycle;
      rep.witness_fn = f;
    }
  }

  void dfs(int root, int v) {
    on_path[v] = true;
    path.push_back(v);
    for (int w = root; w < G.N; ++w) {
      if (G.entry(v, w).is_zero()) continue;
      if (w == root) record(path);
      else if (!on_path[w]) dfs(root, w);
    }
    path.pop_back();
    on_path[v] = false;
  }
};

// Karp's maximum cycle mean on log-coefficients; exact for all-linear gains.
void karp_reduction(const GainMatrix& G, double tol, CycleReport& rep) {
  const int n = G.N;
  const double ninf = -std::numeric_limits<double>::infinity();
  auto weight = [&](int i, int j) {
    const PowerFn& e = G.entry(i, j);
    return e.is_zero() ? ninf : std::log(e.c);
  };
  std::vector<std::vector<double>> F(n + 1, std::vector<double>(n, ninf));
  std::vector<std::vector<int>> parent(n + 1, std::vector<int>(n, -1));
  for (int v = 0; v < n; ++v) F[0][v] = 0.0;
  for (int k = 1; k <= n; ++k) {
    for (int v = 0; v < n; ++v) {
      for (int u = 0; u < n; ++u) {
        const double w = weight(u, v);
        if (w == ninf || F[k - 1][u] == ninf) continue;
        const double cand = F[k - 1][u] + w;
        if (cand > F[k][v]) {
          F[k][v] = cand;
          parent[k][v] = u;
        }
      }
    }
  }
  double best = ninf;
  int best_v = -1;
  for (int v = 0; v < n; ++v) {
    if (F[n][v] == ninf) continue;
    double worst = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      if (F[k][v] == ninf) continue;
      worst = std::min(worst, (F[n][v] - F[k][v]) / (n - k));
    }
    if (worst > best) {
      best = worst;
      best_v = v;
    }
  }
  rep.used_reduction = true;
  if (best_v < 0) {  // no cycles at all
    rep.verdict = CheckVerdict::satisfied;
    rep.max_cycle_mean = 0.0;
    return;
  }
  rep.max_cycle_mean = std::exp(best);
  if (rep.max_cycle_mean > 1.0 + tol) rep.verdict = CheckVerdict::violated;
  else if (rep.max_cycle_mean >= 1.0 - tol) rep.verdict = CheckVerdict::boundary;
  else rep.verdict = CheckVerdict::satisfied;

  // walk parents from (n, best_v); a vertex repeats within n+1 hops
  std::vector<int> walk;
  int v = best_v;
  for (int k = n; k >= 0 && v >= 0; --k) {
    walk.push_back(v);
    v = parent[k][v];
  }
  std::vector<int> seen_at(n, -1);
  for (std::size_t idx = 0; idx < walk.size(); ++idx) {
    if (seen_at[walk[idx]] >= 0) {
      rep.witness.assign(walk.begin() + seen_at[walk[idx]], walk.begin() + idx);
      std::reverse(rep.witness.begin(), rep.witness.end());
      break;
    }
    seen_at[walk[idx]] = static_cast<int>(idx);
  }
  PowerFn f = PowerFn::identity();
  for (std::size_t k = 0; k < rep.witness.size(); ++k)
    f = compose(f, G.entry(rep.witness[k], rep.witness[(k + 1) % rep.witness.size()]));
  rep.witness_fn = f;
}

}  // namespace

CycleReport verify_cycle_condition(const GainMatrix& G, double strict_tol, int cap) {
  CycleReport rep;
  rep.verdict = CheckVerdict::satisfied;
  if (G.N <= cap) {
    Enumerator en(G, strict_tol, rep);
    for (int root = 0; root < G.N; ++root) en.dfs(root, root);
    return rep;
  }
  for (const auto& e : G.entries) {
    if (!e.is_zero() && !e.is_linear())
      throw std::invalid_argument("cycle enumeration cap exceeded and gains are not all linear");
  }
  karp_reduction(G, strict_tol, rep);
  return rep;
}

SigmaApplication apply_sigmas(const GainMatrix& G, const std::vector<PowerFn>& sigmas) {
  if (static_cast<int>(sigmas.size()) != G.N)
    throw std::invalid_argument("sigma count must match subsystem count");
  for (const auto& s : sigmas) {
    if (s.is_zero()) throw std::invalid_argument("sigmas must be invertible");
    if (s.p < 1.0) throw std::invalid_argument("max sigma^{-1} not concave");
  }
  SigmaApplication out;
  out.conjugated = G;
  out.conjugated.sigmas = sigmas;
  for (int i = 0; i < G.N; ++i) {
    const PowerFn si_inv = inverse(sigmas[i]);
    for (int j = 0; j < G.N; ++j) {
      const PowerFn& e = G.entry(i, j);
      if (e.is_zero()) {
        out.conjugated.entry(i, j) = PowerFn::zero();
        continue;
      }
      const PowerFn conj = compose(si_inv, compose(e, sigmas[j]));
      out.conjugated.entry(i, j) = conj;
      const CheckVerdict v = verdict_from(less_than_identity(conj));
      auto severity = [](CheckVerdict c) { return c == CheckVerdict::violated ? 2 : (c == CheckVerdict::boundary ? 1 : 0); };
      if (severity(v) > severity(out.max_verdict)) out.max_verdict = v;
    }
  }
  return out;
}

std::optional<std::vector<PowerFn>> search_linear_sigmas(const GainMatrix& G, int steps) {
  std::vector<PowerFn> id(G.N, PowerFn::identity());
  if (apply_sigmas(G, id).max_verdict == CheckVerdict::satisfied) return id;
  if (G.N > 4) return std::nullopt;
  std::vector<double> coefs;
  for (int k = 0; k < steps; ++k) coefs.push_back(std::pow(10.0, -2.0 + 4.0 * k / (steps - 1)));
  std::vector<int> idx(G.N, 0);
  std::vector<PowerFn> sig(G.N);
  while (true) {
    for (int i = 0; i < G.N; ++i) sig[i] = PowerFn::linear(coefs[idx[i]]);
    if (apply_sigmas(G, sig).max_verdict == CheckVerdict::satisfied) return sig;
    int d = 0;
    while (d < G.N && ++idx[d] == static_cast<int>(coefs.size())) idx[d++] = 0;
    if (d == G.N) break;
  }
  return std::nullopt;
}

namespace {

PowerFn max_same_exponent(const std::vector<PowerFn>& fns, const char* what) {
  PowerFn best = PowerFn::zero();
  for (const auto& f : fns) {
    if (f.is_zero()) continue;
    if (best.is_zero()) best = f;
    else if (f.p != best.p)
      throw std::runtime_error(std::string("composed ") + what + " mixes exponents");
    else best.c = std::max(best.c, f.c);
  }
  return best;
}

}  // namespace

NetworkSSF compose_ssf(const std::vector<QuadSPSF>& spsfs, const GainMatrix& G,
                       bool allow_boundary) {
  if (static_cast<int>(spsfs.size()) != G.N)
    throw std::invalid_argument("certificate count must match gain matrix");
  const CycleReport cycles = verify_cycle_condition(G);
  if (cycles.verdict == CheckVerdict::violated)
    throw std::runtime_error("small-gain cycle condition violated");
  const SigmaApplication conj = apply_sigmas(G, G.sigmas);
  if (conj.max_verdict == CheckVerdict::violated)
    throw std::runtime_error("conjugated gain matrix not below identity");
  const bool boundary =
      cycles.verdict == CheckVerdict::boundary || conj.max_verdict == CheckVerdict::boundary;
  if (boundary && !allow_boundary)
    throw std::runtime_error("small-gain condition on the boundary; composition needs an explicit override");

  NetworkSSF net;
  net.parts = spsfs;
  net.sigmas = G.sigmas;
  net.flavor = G.flavor;
  net.boundary = boundary;

  std::vector<PowerFn> conj_entries;
  for (const auto& e : conj.conjugated.entries) conj_entries.push_back(e);
  net.kappa = max_same_exponent(conj_entries, "kappa");

  std::vector<PowerFn> betas, rhos;
  for (int i = 0; i < G.N; ++i) {
    betas.push_back(compose(inverse(spsfs[i].alpha), G.sigmas[i]));
    rhos.push_back(compose(inverse(G.sigmas[i]), spsfs[i].rho_ext));
  }
  net.alpha = inverse(max_same_exponent(betas, "alpha"));
  net.rho_ext = max_same_exponent(rhos, "rho_ext");

  double psi = 0.0;
  for (int i = 0; i < G.N; ++i) {
    double lam_i = spsfs[i].psi;
    if (G.flavor == Flavor::finite) {
      const double mu = G.mu_into(i);
      if (mu > 0.0) {
        const auto& ex = *G.extras;
        const double t = compose(ex.bar_lambda, minus_identity_inverse(ex.bar_lambda))(mu);
        const double x = spsfs[i].rho_int(t) + spsfs[i].psi;
        lam_i = x + inverse(ex.delta_tilde_f)(x);
      }
    }
    psi = std::max(psi, inverse(G.sigmas[i])(lam_i));
  }
  net.psi = psi;
  return net;
}

double evaluate_ssf(const NetworkSSF& ssf, const Vector& x, const Vector& x_hat) {
  int cx = 0, ch = 0;
  double v = 0.0;
  for (std::size_t i = 0; i < ssf.parts.size(); ++i) {
    const auto& part = ssf.parts[i];
    const Vector xi = x.segment(cx, part.concrete_dim());
    const Vector xhi = x_hat.segment(ch, part.abstract_dim());
    v = std::max(v, inverse(ssf.sigmas[i])(evaluate_spsf(part, xi, xhi)));
    cx += part.concrete_dim();
    ch += part.abstract_dim();
  }
  if (cx != x.size() || ch != x_hat.size())
    throw std::invalid_argument("evaluate_ssf: block dimensions do not tile the states");
  return v;
}

}  // namespace stochabs
