//! L2-regularized logistic regression by truncated Newton (Newton-CG) with
//! a backtracking line search.

use super::layers::{sigmoid, softplus, Layer, Network};
use super::{check_inputs, ModelError, ModelSpec, TrainedModel};

/// Inverse regularization strength C = 1.
pub const LOGREG_L2: f64 = 1.0;
pub const LOGREG_GRAD_TOL: f64 = 1e-6;
const MAX_NEWTON: usize = 200;

struct Problem<'a> {
    xs: Vec<&'a [f64]>,
    y: Vec<f64>,
    l2: f64,
    d: usize,
}

impl Problem<'_> {
    fn margins(&self, theta: &[f64]) -> Vec<f64> {
        let (w, b) = theta.split_at(self.d);
        self.xs.iter().map(|x| b[0] + dot(w, x)).collect()
    }

    /// `Σ log(1 + e^z) - y·z + (l2 / 2)·‖w‖²`.
    fn objective(&self, theta: &[f64]) -> f64 {
        let z = self.margins(theta);
        let data: f64 = z.iter().zip(&self.y).map(|(&z, &y)| softplus(z) - y * z).sum();
        data + 0.5 * self.l2 * dot(&theta[..self.d], &theta[..self.d])
    }

    fn gradient(&self, theta: &[f64], z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d + 1];
        for ((x, &z), &y) in self.xs.iter().zip(z).zip(&self.y) {
            let r = sigmoid(z) - y;
            axpy(r, x, &mut g[..self.d]);
            g[self.d] += r;
        }
        for (gi, wi) in g[..self.d].iter_mut().zip(&theta[..self.d]) {
            *gi += self.l2 * wi;
        }
        g
    }

    fn hess_vec(&self, dz: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d + 1];
        for (x, &dd) in self.xs.iter().zip(dz) {
            let s = dd * (v[self.d] + dot(&v[..self.d], x));
            axpy(s, x, &mut out[..self.d]);
            out[self.d] += s;
        }
        for (o, vi) in out[..self.d].iter_mut().zip(&v[..self.d]) {
            *o += self.l2 * vi;
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Conjugate gradients on `H s = -g`, stopping at relative residual `tol`.
fn cg(p: &Problem<'_>, dz: &[f64], g: &[f64], tol: f64) -> Vec<f64> {
    let n = g.len();
    let mut s = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut dir = r.clone();
    let mut rr = dot(&r, &r);
    let stop = tol * tol * rr;
    for _ in 0..(2 * n).max(50) {
        if rr <= stop {
            break;
        }
        let hd = p.hess_vec(dz, &dir);
        let curv = dot(&dir, &hd);
        if curv <= 0.0 {
            break;
        }
        let alpha = rr / curv;
        axpy(alpha, &dir, &mut s);
        axpy(-alpha, &hd, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (di, ri) in dir.iter_mut().zip(&r) {
            *di = ri + beta * *di;
        }
    }
    if s.iter().all(|&v| v == 0.0) {
        return r;
    }
    s
}

/// The objective minimized by [`fit_logreg`], evaluated for a fitted model.
pub fn logreg_objective<X: AsRef<[f64]>>(model: &TrainedModel, xs: &[X], ys: &[bool], l2: f64) -> f64 {
    let (w, b) = weights(&model.net);
    let mut theta = w.to_vec();
    theta.push(b);
    let p = Problem {
        xs: xs.iter().map(|x| x.as_ref()).collect(),
        y: ys.iter().map(|&y| y as u8 as f64).collect(),
        l2,
        d: w.len(),
    };
    p.objective(&theta)
}

fn weights(net: &Network) -> (&[f64], f64) {
    match &net.layers[0] {
        Layer::Dense { w, b, .. } => (w, b[0]),
        _ => unreachable!("logistic model starts with a dense layer"),
    }
}

/// Fits an unweighted logistic regression with penalty `(l2 / 2)·‖w‖²` on
/// the weights only, to gradient norm below [`LOGREG_GRAD_TOL`].
pub fn fit_logreg<X: AsRef<[f64]>>(xs: &[X], ys: &[bool], l2: f64) -> Result<TrainedModel, ModelError> {
    let d = xs.first().map(|x| x.as_ref().len()).ok_or(ModelError::SingleClass)?;
    check_inputs(xs, ys, d)?;
    if ys.iter().all(|&y| y) || ys.iter().all(|&y| !y) {
        return Err(ModelError::SingleClass);
    }
    if !(l2 > 0.0 && l2.is_finite()) {
        return Err(ModelError::InvalidConfig(format!("l2 must be positive, got {l2}")));
    }
    let p = Problem {
        xs: xs.iter().map(|x| x.as_ref()).collect(),
        y: ys.iter().map(|&y| y as u8 as f64).collect(),
        l2,
        d,
    };
    let mut theta = vec![0.0; d + 1];
    let mut f = p.objective(&theta);
    let mut history = vec![f];
    let mut gnorm = f64::INFINITY;
    for _ in 0..MAX_NEWTON {
        let z = p.margins(&theta);
        let g = p.gradient(&theta, &z);
        gnorm = norm(&g);
        if gnorm < LOGREG_GRAD_TOL {
            break;
        }
        let dz: Vec<f64> = z
            .iter()
            .map(|&z| {
                let s = sigmoid(z);
                s * (1.0 - s)
            })
            .collect();
        let step = cg(&p, &dz, &g, gnorm.sqrt().min(0.5));
        let slope = dot(&g, &step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let fc = p.objective(&cand);
            if fc <= f + 1e-4 * t * slope {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        history.push(f);
        if !accepted {
            break;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    if gnorm >= LOGREG_GRAD_TOL {
        let z = p.margins(&theta);
        gnorm = norm(&p.gradient(&theta, &z));
        if gnorm >= LOGREG_GRAD_TOL {
            return Err(ModelError::NotConverged { grad_norm: gnorm });
        }
    }
    let spec = ModelSpec::logreg(d);
    let mut net = spec.build()?;
    if let Layer::Dense { w, b, .. } = &mut net.layers[0] {
        w.copy_from_slice(&theta[..d]);
        b[0] = theta[d];
    }
    Ok(TrainedModel { spec, net, history })
}
