//! Single-chain dynamic HMC with no-U-turn termination, dual-averaging step
//! size adaptation, and windowed diagonal mass-matrix estimation.
//!
//! The transition is the slice-sampled recursive doubling scheme: a slice
//! variable is drawn against the initial energy, the trajectory doubles in a
//! random direction until a U-turn or divergence, and the next state is drawn
//! uniformly among slice-acceptable points. Divergences trip when the energy
//! error exceeds 1000.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::model::LogDensity;

pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Dual-averaging constants from the usual NUTS configuration.
const DA_GAMMA: f64 = 0.05;
const DA_T0: f64 = 10.0;
const DA_KAPPA: f64 = 0.75;

#[derive(Clone)]
struct State {
    z: Vec<f64>,
    r: Vec<f64>,
    grad: Vec<f64>,
    lp: f64,
}

struct Tree {
    minus: State,
    plus: State,
    prop_z: Vec<f64>,
    prop_grad: Vec<f64>,
    prop_lp: f64,
    n: f64,
    cont: bool,
    divergent: bool,
    alpha_sum: f64,
    n_alpha: f64,
}

/// Result of one transition.
pub struct Transition {
    pub divergent: bool,
    pub accept_stat: f64,
    pub tree_depth: usize,
}

struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps_bar: f64,
    count: f64,
    target: f64,
}

impl DualAveraging {
    fn new(eps: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            h_bar: 0.0,
            log_eps_bar: eps.ln(),
            count: 0.0,
            target,
        }
    }

    fn update(&mut self, accept_stat: f64) -> f64 {
        self.count += 1.0;
        let t = self.count;
        let eta = 1.0 / (t + DA_T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        let log_eps = self.mu - t.sqrt() / DA_GAMMA * self.h_bar;
        let w = t.powf(-DA_KAPPA);
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar;
        log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Streaming mean/variance accumulator.
#[derive(Default, Clone)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn reset(&mut self, dim: usize) {
        self.n = 0.0;
        self.mean = vec![0.0; dim];
        self.m2 = vec![0.0; dim];
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate (shrunk toward 1e-3 for small counts).
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|&m2| {
                let var = if n > 1.0 { m2 / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .map(|v| v.max(1e-10))
            .collect()
    }
}

/// Warmup schedule: a step-size-only opening buffer, doubling variance
/// estimation windows, and a step-size-only closing buffer.
struct Schedule {
    init_end: usize,
    term_start: usize,
    window_ends: Vec<usize>,
}

impl Schedule {
    fn new(warmup: usize) -> Self {
        if warmup == 0 {
            return Self {
                init_end: 0,
                term_start: 0,
                window_ends: Vec::new(),
            };
        }
        let (init, term, base) = if warmup >= 150 {
            (75, 50, 25)
        } else {
            let init = ((warmup as f64) * 0.15).round().max(1.0) as usize;
            let term = ((warmup as f64) * 0.10).round().max(1.0) as usize;
            let base = (warmup - init.min(warmup) - term.min(warmup)).max(1);
            (init, term, base)
        };
        let term_start = warmup.saturating_sub(term);
        let mut window_ends = Vec::new();
        let mut start = init.min(term_start);
        let mut size = base;
        while start < term_start {
            let mut end = start + size;
            // absorb a too-small trailing window into this one
            if end + size / 2 >= term_start {
                end = term_start;
            }
            window_ends.push(end.min(term_start));
            start = end;
            size *= 2;
        }
        Self {
            init_end: init.min(term_start),
            term_start,
            window_ends,
        }
    }
}

pub struct NutsChain<'a, D: LogDensity + ?Sized> {
    density: &'a D,
    rng: ChaCha20Rng,
    dim: usize,
    z: Vec<f64>,
    grad: Vec<f64>,
    lp: f64,
    inv_mass: Vec<f64>,
    step_size: f64,
    max_depth: usize,
    warmup: usize,
    iteration: usize,
    schedule: Schedule,
    da: DualAveraging,
    welford: Welford,
    target_accept: f64,
}

impl<'a, D: LogDensity + ?Sized> NutsChain<'a, D> {
    /// Builds a chain at `z0` (density must be finite there).
    pub fn new(
        density: &'a D,
        z0: Vec<f64>,
        warmup: usize,
        target_accept: f64,
        max_depth: usize,
        rng: ChaCha20Rng,
    ) -> Self {
        let dim = density.dim();
        let mut grad = vec![0.0; dim];
        let lp = density.log_density_and_grad(&z0, &mut grad);
        let mut chain = Self {
            density,
            rng,
            dim,
            z: z0,
            grad,
            lp,
            inv_mass: vec![1.0; dim],
            step_size: 1.0,
            max_depth,
            warmup,
            iteration: 0,
            schedule: Schedule::new(warmup),
            da: DualAveraging::new(1.0, target_accept),
            welford: Welford::default(),
            target_accept,
        };
        chain.welford.reset(dim);
        chain.step_size = chain.find_reasonable_epsilon();
        chain.da = DualAveraging::new(chain.step_size, target_accept);
        chain
    }

    pub fn position(&self) -> &[f64] {
        &self.z
    }

    pub fn log_density(&self) -> f64 {
        self.lp
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn inv_mass(&self) -> &[f64] {
        &self.inv_mass
    }

    fn kinetic(&self, r: &[f64]) -> f64 {
        0.5 * r
            .iter()
            .zip(&self.inv_mass)
            .map(|(&ri, &vi)| vi * ri * ri)
            .sum::<f64>()
    }

    fn sample_momentum(&mut self) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let eta: f64 = self.rng.sample(StandardNormal);
                eta / self.inv_mass[i].sqrt()
            })
            .collect()
    }

    fn leapfrog(&self, state: &State, eps: f64) -> State {
        let mut r: Vec<f64> = state
            .r
            .iter()
            .zip(&state.grad)
            .map(|(&ri, &gi)| ri + 0.5 * eps * gi)
            .collect();
        let z: Vec<f64> = state
            .z
            .iter()
            .zip(r.iter().zip(&self.inv_mass))
            .map(|(&zi, (&ri, &vi))| zi + eps * vi * ri)
            .collect();
        let mut grad = vec![0.0; self.dim];
        let lp = self.density.log_density_and_grad(&z, &mut grad);
        for (ri, &gi) in r.iter_mut().zip(&grad) {
            *ri += 0.5 * eps * gi;
        }
        State { z, r, grad, lp }
    }

    fn find_reasonable_epsilon(&mut self) -> f64 {
        let r = self.sample_momentum();
        let state = State {
            z: self.z.clone(),
            r: r.clone(),
            grad: self.grad.clone(),
            lp: self.lp,
        };
        let joint0 = self.lp - self.kinetic(&r);
        let mut eps = 1.0;
        let ratio = |chain: &Self, eps: f64| {
            let next = chain.leapfrog(&state, eps);
            let joint = next.lp - chain.kinetic(&next.r);
            (joint - joint0).exp()
        };
        let mut a = ratio(self, eps);
        if !a.is_finite() {
            a = 0.0;
        }
        let dir: f64 = if a > 0.5 { 1.0 } else { -1.0 };
        for _ in 0..60 {
            eps *= 2.0f64.powf(dir);
            if !(1e-10..=1e7).contains(&eps) {
                break;
            }
            let mut a = ratio(self, eps);
            if !a.is_finite() {
                a = 0.0;
            }
            if (dir > 0.0 && a <= 0.5) || (dir < 0.0 && a >= 0.5) {
                break;
            }
        }
        eps.clamp(1e-10, 1e7)
    }

    /// No-U-turn check over the span `minus..plus` using velocities.
    fn no_uturn(&self, minus: &State, plus: &State) -> bool {
        let mut dot_minus = 0.0;
        let mut dot_plus = 0.0;
        for i in 0..self.dim {
            let dz = plus.z[i] - minus.z[i];
            dot_minus += dz * self.inv_mass[i] * minus.r[i];
            dot_plus += dz * self.inv_mass[i] * plus.r[i];
        }
        dot_minus >= 0.0 && dot_plus >= 0.0
    }

    fn build_tree(&mut self, from: &State, log_u: f64, dir: f64, depth: usize, joint0: f64) -> Tree {
        if depth == 0 {
            let next = self.leapfrog(from, dir * self.step_size);
            let joint = next.lp - self.kinetic(&next.r);
            let accepted = log_u <= joint;
            let divergent = !(log_u < joint + DIVERGENCE_THRESHOLD);
            let mut alpha = (joint - joint0).exp();
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            return Tree {
                prop_z: next.z.clone(),
                prop_grad: next.grad.clone(),
                prop_lp: next.lp,
                minus: next.clone(),
                plus: next,
                n: if accepted { 1.0 } else { 0.0 },
                cont: !divergent,
                divergent,
                alpha_sum: alpha.min(1.0),
                n_alpha: 1.0,
            };
        }
        let mut inner = self.build_tree(from, log_u, dir, depth - 1, joint0);
        if !inner.cont {
            return inner;
        }
        let edge = if dir > 0.0 { inner.plus.clone() } else { inner.minus.clone() };
        let outer = self.build_tree(&edge, log_u, dir, depth - 1, joint0);
        let total = inner.n + outer.n;
        if outer.n > 0.0 && self.rng.random::<f64>() < outer.n / total.max(1.0) {
            inner.prop_z = outer.prop_z;
            inner.prop_grad = outer.prop_grad;
            inner.prop_lp = outer.prop_lp;
        }
        if dir > 0.0 {
            inner.plus = outer.plus;
        } else {
            inner.minus = outer.minus;
        }
        inner.n = total;
        inner.alpha_sum += outer.alpha_sum;
        inner.n_alpha += outer.n_alpha;
        inner.divergent = inner.divergent || outer.divergent;
        inner.cont = outer.cont && self.no_uturn(&inner.minus, &inner.plus);
        inner
    }

    /// Runs one transition, adapting while inside warmup.
    pub fn step(&mut self) -> Transition {
        self.iteration += 1;
        let r = self.sample_momentum();
        let joint0 = self.lp - self.kinetic(&r);
        let log_u = joint0 + self.rng.random::<f64>().ln();

        let current = State {
            z: self.z.clone(),
            r,
            grad: self.grad.clone(),
            lp: self.lp,
        };
        let mut minus = current.clone();
        let mut plus = current.clone();
        let mut prop_z = current.z.clone();
        let mut prop_grad = current.grad.clone();
        let mut prop_lp = current.lp;
        let mut n = 1.0;
        let mut depth = 0;
        let mut divergent = false;
        let mut alpha_sum = 0.0;
        let mut n_alpha = 0.0;

        while depth < self.max_depth {
            let dir: f64 = if self.rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            let edge = if dir > 0.0 { plus.clone() } else { minus.clone() };
            let tree = self.build_tree(&edge, log_u, dir, depth, joint0);
            alpha_sum += tree.alpha_sum;
            n_alpha += tree.n_alpha;
            divergent = divergent || tree.divergent;
            if tree.cont {
                if tree.n > 0.0 && self.rng.random::<f64>() < (tree.n / n).min(1.0) {
                    prop_z = tree.prop_z.clone();
                    prop_grad = tree.prop_grad.clone();
                    prop_lp = tree.prop_lp;
                }
            }
            n += tree.n;
            if dir > 0.0 {
                plus = tree.plus;
            } else {
                minus = tree.minus;
            }
            let keep_going = tree.cont && self.no_uturn(&minus, &plus);
            depth += 1;
            if !keep_going {
                break;
            }
        }

        self.z = prop_z;
        self.grad = prop_grad;
        self.lp = prop_lp;

        let accept_stat = if n_alpha > 0.0 { alpha_sum / n_alpha } else { 0.0 };
        if self.iteration <= self.warmup {
            self.adapt(accept_stat);
        }
        Transition {
            divergent,
            accept_stat,
            tree_depth: depth,
        }
    }

    fn adapt(&mut self, accept_stat: f64) {
        let it = self.iteration;
        self.step_size = self.da.update(accept_stat);
        let in_variance_phase =
            it > self.schedule.init_end && it <= self.schedule.term_start;
        if in_variance_phase {
            let z = self.z.clone();
            self.welford.push(&z);
            if self.schedule.window_ends.contains(&it) && self.welford.n >= 2.0 {
                self.inv_mass = self.welford.regularized_variance();
                self.welford.reset(self.dim);
                // restart step-size adaptation around the current value
                let eps = self.find_reasonable_epsilon();
                self.da = DualAveraging::new(eps, self.target_accept);
                self.step_size = eps;
            }
        }
        if it == self.warmup {
            self.step_size = self.da.adapted();
        }
    }
}
