//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use poisonbench::data::{generate_synthetic, merge, Dataset, SyntheticSpec};
use poisonbench::regress::{self, Family, RegressionModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn synth(d: usize, n: usize, noise: f64, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec::random(d, n, noise, seed)).unwrap().0
}

/// Poison rows placed uniformly at random in the unit box.
pub fn random_poison(d: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..p).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let ys: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
    Dataset::from_rows(&rows, &ys).unwrap()
}

/// Straight evaluation of `|Σ_all ½r² / L_o − N/n_o|`.
pub fn dispersion_by_hand(clean: &Dataset, poison: &Dataset, m: &RegressionModel, lo: f64) -> f64 {
    let mut total = 0.0;
    for ds in [clean, poison] {
        for i in 0..ds.len() {
            let mut f = m.bias;
            for j in 0..ds.dim() {
                f += m.weights[j] * ds.features[(i, j)];
            }
            total += 0.5 * (f - ds.responses[i]).powi(2);
        }
    }
    let ratio = (clean.len() + poison.len()) as f64 / clean.len() as f64;
    (total / lo - ratio).abs()
}

pub fn clean_loss_by_hand(clean: &Dataset, m: &RegressionModel) -> f64 {
    (0..clean.len())
        .map(|i| {
            let f = m.bias + (0..clean.dim()).map(|j| m.weights[j] * clean.features[(i, j)]).sum::<f64>();
            0.5 * (f - clean.responses[i]).powi(2)
        })
        .sum()
}

fn with_point(poison: &Dataset, c: usize, z: &DVector<f64>) -> Dataset {
    let mut p = poison.clone();
    let d = p.dim();
    for j in 0..d {
        p.features[(c, j)] = z[j];
    }
    p.responses[c] = z[d];
    p
}

fn point(poison: &Dataset, c: usize) -> DVector<f64> {
    let d = poison.dim();
    DVector::from_fn(d + 1, |j, _| if j < d { poison.features[(c, j)] } else { poison.responses[c] })
}

pub fn refit(clean: &Dataset, poison: &Dataset, family: Family, lambda: f64) -> RegressionModel {
    let (all, _) = merge(clean, poison).unwrap();
    regress::fit_model(&all, family, lambda).unwrap()
}

/// Central differences of `θ(z_c)` with a full refit per probe. Rows follow `z_c`.
pub fn fd_theta_jacobian(clean: &Dataset, poison: &Dataset, c: usize, family: Family, lambda: f64, h: f64) -> DMatrix<f64> {
    let z = point(poison, c);
    let k = z.len();
    let mut jac = DMatrix::zeros(k, k);
    for i in 0..k {
        let mut zp = z.clone();
        zp[i] += h;
        let mut zm = z.clone();
        zm[i] -= h;
        let tp = refit(clean, &with_point(poison, c, &zp), family, lambda).theta();
        let tm = refit(clean, &with_point(poison, c, &zm), family, lambda).theta();
        jac.row_mut(i).copy_from(&((tp - tm) / (2.0 * h)).transpose());
    }
    jac
}

/// Central differences of an outer objective of `(poison, θ(poison))`.
pub fn fd_gradient<F>(clean: &Dataset, poison: &Dataset, c: usize, family: Family, lambda: f64, h: f64, objective: F) -> DVector<f64>
where
    F: Fn(&Dataset, &RegressionModel) -> f64,
{
    let z = point(poison, c);
    DVector::from_fn(z.len(), |i, _| {
        let mut zp = z.clone();
        zp[i] += h;
        let mut zm = z.clone();
        zm[i] -= h;
        let pp = with_point(poison, c, &zp);
        let pm = with_point(poison, c, &zm);
        let fp = objective(&pp, &refit(clean, &pp, family, lambda));
        let fm = objective(&pm, &refit(clean, &pm, family, lambda));
        (fp - fm) / (2.0 * h)
    })
}

/// `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).amax() / b.amax().max(floor)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    (a - b).amax() / b.amax().max(floor)
}

/// Unevaluated sum `hi + lo` carrying roughly 106 bits of precision.
#[derive(Debug, Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    fn two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        let bb = s - a;
        DoubleDouble { hi: s, lo: (a - (s - bb)) + (b - bb) }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let s = hi + lo;
        DoubleDouble { hi: s, lo: lo - (s - hi) }
    }

    fn mul(self, o: Self) -> Self {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p) + (self.hi * o.lo + self.lo * o.hi);
        Self::renorm(p, e)
    }

    fn one_minus(self) -> Self {
        let s = Self::two_sum(1.0, -self.hi);
        Self::renorm(s.hi, s.lo - self.lo)
    }

    fn pow(self, mut n: u64) -> Self {
        let mut acc = DoubleDouble { hi: 1.0, lo: 0.0 };
        let mut base = self;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.mul(base);
            n >>= 1;
        }
        acc
    }

    fn at_most(self, x: f64) -> bool {
        self.hi < x || (self.hi == x && self.lo <= 0.0)
    }
}

/// Smallest β with `(1 − (1 − α)^γ)^β ≤ ε`, evaluating the power directly in
/// double-double arithmetic and bisecting on β.
pub fn beta_brute_force(alpha: f64, gamma: u32, eps: f64) -> u64 {
    let q = DoubleDouble::two_sum(1.0, -alpha).pow(gamma as u64).one_minus();
    let ok = |b: u64| q.pow(b).at_most(eps);
    if ok(1) {
        return 1;
    }
    let mut hi = 2u64;
    while !ok(hi) {
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Minimum refit loss over all size-`n` subsets (by enumeration) and its subset.
pub fn exhaustive_min_subset(ds: &Dataset, n: usize, family: Family, lambda: f64) -> (f64, Vec<usize>) {
    let big_n = ds.len();
    let mut best = (f64::INFINITY, Vec::new());
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let sub = ds.select(&idx);
        let m = regress::fit_model(&sub, family, lambda).unwrap();
        let l = regress::loss(&sub, &m, true).unwrap();
        if l < best.0 {
            best = (l, idx.clone());
        }
        // next combination in lexicographic order
        let mut i = n;
        while i > 0 && idx[i - 1] == big_n - n + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        idx[i - 1] += 1;
        for k in i..n {
            idx[k] = idx[k - 1] + 1;
        }
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}
