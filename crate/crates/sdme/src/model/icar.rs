//! Intrinsic CAR prior via the joint pairwise-difference form.
//!
//! The joint (improper) density implies the conditional of each effect given
//! its neighbours: Normal(neighbour mean, 1 / (tau_u * n_l)). The rank of the
//! pairwise-difference precision is `m - c` for `c` connected components,
//! which is what the `log tau_u` exponent accounts for. The intrinsic prior
//! leaves component means free, so posteriors add a soft sum-to-zero term
//! per component.

use crate::spatial::{connected_components, SpatialGraph};

/// How the per-component level indeterminacy is pinned down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumToZero {
    /// Pure pairwise-difference density (used by the conditional oracle).
    None,
    /// Adds `mean(u_C) ~ Normal(0, 0.001 * |C|^(-1/2))` per component `C`.
    Soft,
}

const SOFT_SCALE: f64 = 0.001;

/// Precomputed graph structure for repeated ICAR evaluations.
#[derive(Debug, Clone)]
pub struct IcarModel {
    pub n_sites: usize,
    pub edges: Vec<(usize, usize)>,
    /// Component id per site and component sizes.
    pub component_of: Vec<usize>,
    pub component_sizes: Vec<usize>,
}

impl IcarModel {
    pub fn new(graph: &SpatialGraph) -> Self {
        let comps = connected_components(graph);
        let mut component_of = vec![0usize; graph.n_sites];
        let mut component_sizes = Vec::with_capacity(comps.len());
        for (c, members) in comps.iter().enumerate() {
            for &j in members {
                component_of[j] = c;
            }
            component_sizes.push(members.len());
        }
        Self {
            n_sites: graph.n_sites,
            edges: graph.edges.clone(),
            component_of,
            component_sizes,
        }
    }

    pub fn n_components(&self) -> usize {
        self.component_sizes.len()
    }

    /// Unnormalized log-density; when gradient slots are supplied they are
    /// *accumulated into* (not overwritten).
    pub fn lpdf_grad(
        &self,
        u: &[f64],
        tau: f64,
        constraint: SumToZero,
        mut grad_u: Option<&mut [f64]>,
        grad_tau: Option<&mut f64>,
    ) -> f64 {
        assert_eq!(u.len(), self.n_sites);
        let rank = (self.n_sites - self.n_components()) as f64;
        let mut pair_sq = 0.0;
        for &(l, t) in &self.edges {
            let d = u[l] - u[t];
            pair_sq += d * d;
            if let Some(g) = grad_u.as_deref_mut() {
                g[l] -= tau * d;
                g[t] += tau * d;
            }
        }
        let mut lp = 0.5 * rank * tau.ln() - 0.5 * tau * pair_sq;
        if let Some(gt) = grad_tau {
            *gt += 0.5 * rank / tau - 0.5 * pair_sq;
        }

        if constraint == SumToZero::Soft {
            let n_comp = self.n_components();
            let mut sums = vec![0.0; n_comp];
            for (j, &uj) in u.iter().enumerate() {
                sums[self.component_of[j]] += uj;
            }
            let mut scaled = vec![0.0; n_comp];
            for c in 0..n_comp {
                let size = self.component_sizes[c] as f64;
                let mean = sums[c] / size;
                let sd = SOFT_SCALE / size.sqrt();
                lp += super::math::normal_lpdf(mean, 0.0, sd);
                scaled[c] = mean / (sd * sd) / size;
            }
            if let Some(g) = grad_u.as_deref_mut() {
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj -= scaled[self.component_of[j]];
                }
            }
        }
        lp
    }
}

/// Unnormalized ICAR log-density (see [`IcarModel::lpdf_grad`]).
pub fn icar_lpdf(u: &[f64], tau: f64, graph: &SpatialGraph, constraint: SumToZero) -> f64 {
    IcarModel::new(graph).lpdf_grad(u, tau, constraint, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::SpatialGraph;
    use rand::prelude::*;

    fn path3() -> SpatialGraph {
        SpatialGraph::from_edges(vec![1, 2, 3], vec![(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn constant_field_has_zero_penalty() {
        let g = path3();
        let lp = icar_lpdf(&[0.4, 0.4, 0.4], 1.7, &g, SumToZero::None);
        // only the rank term remains
        assert!((lp - 0.5 * 2.0 * 1.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn path_graph_penalty() {
        let g = path3();
        let lp = icar_lpdf(&[0.0, 1.0, 2.0], 1.0, &g, SumToZero::None);
        // tau = 1: rank term vanishes, penalty is -(1/2)(1 + 1)
        assert!((lp + 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = SpatialGraph::from_edges(vec![1, 2, 3, 4, 5], vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
            .unwrap();
        let icar = IcarModel::new(&g);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        for constraint in [SumToZero::None, SumToZero::Soft] {
            let u: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tau = 1.3;
            let mut gu = vec![0.0; 5];
            let mut gt = 0.0;
            icar.lpdf_grad(&u, tau, constraint, Some(&mut gu), Some(&mut gt));
            let h = 1e-6;
            for i in 0..5 {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (icar.lpdf_grad(&up, tau, constraint, None, None)
                    - icar.lpdf_grad(&dn, tau, constraint, None, None))
                    / (2.0 * h);
                // constraint precision is ~1e6 so allow a scaled tolerance
                let tol = 1e-4 * fd.abs().max(1.0);
                assert!((gu[i] - fd).abs() < tol, "du[{i}]: {} vs {}", gu[i], fd);
            }
            let fd = (icar.lpdf_grad(&u, tau + h, constraint, None, None)
                - icar.lpdf_grad(&u, tau - h, constraint, None, None))
                / (2.0 * h);
            assert!((gt - fd).abs() < 1e-5);
        }
    }

    /// Full conditionals of the pairwise-difference joint match the
    /// neighbour-mean normal on random graphs, via a dense precision matrix.
    #[test]
    fn conditionals_match_dense_construction() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        for trial in 0..20 {
            let n = 5;
            // random connected-ish graph: a spanning path plus random extras
            let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
            for _ in 0..rng.random_range(0..4) {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if a != b {
                    edges.push((a.min(b), a.max(b)));
                }
            }
            let g = SpatialGraph::from_edges((0..n as i64).collect(), edges).unwrap();
            let tau = rng.random_range(0.5..3.0);
            // dense precision Q = tau (D - W)
            let mut q = vec![vec![0.0; n]; n];
            for &(l, t) in &g.edges {
                q[l][t] -= tau;
                q[t][l] -= tau;
                q[l][l] += tau;
                q[t][t] += tau;
            }
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            for l in 0..n {
                if g.neighbor_counts[l] == 0 {
                    continue;
                }
                // GMRF conditional from the dense precision
                let cond_prec = q[l][l];
                let cond_mean = -(0..n)
                    .filter(|&t| t != l)
                    .map(|t| q[l][t] * u[t])
                    .sum::<f64>()
                    / cond_prec;
                // Eq-form conditional: neighbour mean, precision tau * n_l
                let n_l = g.neighbor_counts[l] as f64;
                let nb_mean = g
                    .edges
                    .iter()
                    .filter_map(|&(a, b)| {
                        if a == l {
                            Some(u[b])
                        } else if b == l {
                            Some(u[a])
                        } else {
                            None
                        }
                    })
                    .sum::<f64>()
                    / n_l;
                assert!((cond_mean - nb_mean).abs() < 1e-10, "trial {trial}");
                assert!((cond_prec - tau * n_l).abs() < 1e-10, "trial {trial}");
            }
        }
    }
}
