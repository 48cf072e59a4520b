//! Finite-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Mode, Network};
use super::{batch_loss_and_grads, bce_from_logit, ModelError};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Coordinates sampled, drawn over parameters and inputs together.
    pub points: usize,
    pub h: f64,
    pub seed: u64,
    /// Fixed dropout masks are drawn from this seed; `None` checks the
    /// inference path.
    pub dropout_seed: Option<u64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            points: 100,
            h: 1e-5,
            seed: 0,
            dropout_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crosses a ReLU kink or changes a
    /// pooling winner.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

enum Coord {
    Param(usize, usize),
    Input(usize, usize),
}

struct Eval<'a> {
    ys: &'a [bool],
    weights: &'a [f64],
    dropout_seed: Option<u64>,
}

impl Eval<'_> {
    fn rng(&self) -> Option<ChaCha8Rng> {
        self.dropout_seed.map(ChaCha8Rng::seed_from_u64)
    }

    /// Loss and the concatenated kink pattern over the batch.
    fn loss(&self, net: &Network, xs: &[Vec<f64>]) -> Result<(f64, Vec<usize>), ModelError> {
        let mut rng = self.rng();
        let b = xs.len() as f64;
        let mut total = 0.0;
        let mut pattern = Vec::new();
        for ((x, &y), &w) in xs.iter().zip(self.ys).zip(self.weights) {
            let mode = match rng.as_mut() {
                Some(r) => Mode::Train(r),
                None => Mode::Eval,
            };
            let t = net.forward(x, mode)?;
            total += w * bce_from_logit(t.logit, y);
            pattern.extend(t.pattern(net));
        }
        Ok((total / b + net.l2_penalty(), pattern))
    }
}

/// Compares analytic gradients of the weighted training loss, with respect
/// to both parameters and inputs, against central differences.
pub fn grad_check(
    net: &Network,
    xs: &[Vec<f64>],
    ys: &[bool],
    weights: &[f64],
    tolerance: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, ModelError> {
    let ev = Eval {
        ys,
        weights,
        dropout_seed: opts.dropout_seed,
    };
    let mut rng = ev.rng();
    let (_, pgrads) = batch_loss_and_grads(net, xs, ys, weights, rng.as_mut())?;

    // Input gradients, one backward pass per sample with the same masks.
    let mut rng = ev.rng();
    let mut igrads = Vec::with_capacity(xs.len());
    for ((x, &y), &w) in xs.iter().zip(ys).zip(weights) {
        let mode = match rng.as_mut() {
            Some(r) => Mode::Train(r),
            None => Mode::Eval,
        };
        let t = net.forward(x, mode)?;
        let d = w * (t.output - y as u8 as f64) / xs.len() as f64;
        let mut scratch = net.zero_grads();
        igrads.push(net.backward(&t, d, &mut scratch));
    }

    let (_, base_pattern) = ev.loss(net, xs)?;
    let sizes: Vec<usize> = pgrads.iter().map(|g| g.len()).collect();
    let n_params: usize = sizes.iter().sum();
    let n_inputs: usize = xs.iter().map(|x| x.len()).sum();
    let mut pick = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        tolerance,
    };
    for _ in 0..opts.points {
        let mut k = pick.random_range(0..n_params + n_inputs);
        let coord = if k < n_params {
            let mut t = 0;
            while k >= sizes[t] {
                k -= sizes[t];
                t += 1;
            }
            Coord::Param(t, k)
        } else {
            k -= n_params;
            let mut s = 0;
            while k >= xs[s].len() {
                k -= xs[s].len();
                s += 1;
            }
            Coord::Input(s, k)
        };
        let probe = |delta: f64| -> Result<(f64, Vec<usize>), ModelError> {
            match coord {
                Coord::Param(t, i) => {
                    let mut n = net.clone();
                    n.params_mut()[t][i] += delta;
                    ev.loss(&n, xs)
                }
                Coord::Input(s, i) => {
                    let mut moved = xs.to_vec();
                    moved[s][i] += delta;
                    ev.loss(net, &moved)
                }
            }
        };
        let (fp, pp) = probe(opts.h)?;
        let (fm, pm) = probe(-opts.h)?;
        if pp != base_pattern || pm != base_pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * opts.h);
        let analytic = match coord {
            Coord::Param(t, i) => pgrads[t][i],
            Coord::Input(s, i) => igrads[s][i],
        };
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(rel_error(analytic, numeric));
    }
    Ok(report)
}
