//! Seeded instance generators and brute-force oracles shared by the
//! integration tests. Nothing here calls into the solver under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use posminimax::model::ProblemInstance;
use posminimax::synthesis::{self, Optimum, SynthesisStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Spectral radius of a nonnegative matrix by plain power iteration with a
/// generous iteration count. Only used to scale generated instances.
fn rough_spectral_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut v = DVector::from_element(n, 1.0);
    let mut rho = 0.0;
    for _ in 0..2000 {
        let w = m * &v + &v;
        let norm = w.amax();
        rho = norm / v.amax() - 1.0;
        v = w / norm;
    }
    rho
}

/// A random instance satisfying `A >= |B|E` and `s > E'|r|`, with `gamma`
/// left at zero. Dimensions: `n <= 8`, `m <= 3`, `l <= 2`.
pub fn random_instance(rng: &mut ChaCha8Rng) -> ProblemInstance {
    let n = rng.gen_range(1..=8);
    let m = rng.gen_range(1..=3);
    let l = rng.gen_range(1..=2);

    let e = DMatrix::from_fn(m, n, |_, _| {
        if rng.gen_bool(0.5) {
            rng.gen_range(0.2..1.0)
        } else {
            0.0
        }
    });
    let b = DMatrix::from_fn(n, m, |_, _| {
        if rng.gen_bool(0.6) {
            rng.gen_range(-0.3..0.3)
        } else {
            0.0
        }
    });
    let a0 = DMatrix::from_fn(n, n, |i, j| {
        if i == j || rng.gen_bool(0.4) {
            rng.gen_range(0.0..1.0)
        } else {
            0.0
        }
    });
    let mut a = &a0 + b.abs() * &e;
    let mut b = b;
    let target = rng.gen_range(0.5..1.1);
    let rho = rough_spectral_radius(&a);
    if rho > 0.0 {
        // scaling A0 and B together keeps A >= |B|E
        let c = target / rho;
        a *= c;
        b *= c;
        // rounding in the rescale may leave A a ulp below |B|E
        a = a.zip_map(&(b.abs() * &e), f64::max);
    }
    let f = DMatrix::from_fn(n, l, |i, _| {
        if i == 0 || rng.gen_bool(0.5) {
            rng.gen_range(0.05..1.0)
        } else {
            0.0
        }
    });
    let r = DVector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5));
    let s = e.transpose() * r.abs() + DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5));
    // permute F's guaranteed row so channel coupling is not always on state 0
    let mut f = f;
    if n > 1 {
        let k = rng.gen_range(0..n);
        f.swap_rows(0, k);
    }
    ProblemInstance::from_parts(a, b, f, e, s, r, DVector::zeros(l))
}

/// A random instance whose synthesis LP is bounded, with
/// `gamma = F'p + margin` where the margin is uniform in `[0, 0.5)`.
pub fn random_synthesized(rng: &mut ChaCha8Rng) -> (ProblemInstance, Optimum) {
    loop {
        let inst = random_instance(rng);
        let cert = synthesis::synthesize(&inst).expect("generated instance is valid");
        if cert.status != SynthesisStatus::Synthesized {
            continue;
        }
        let opt = cert.optimum.unwrap();
        let margin = DVector::from_fn(inst.l, |_, _| rng.gen_range(0.0..0.5));
        let inst = inst.with_gamma(&opt.gamma_min + margin);
        let opt = synthesis::synthesize(&inst).unwrap().optimum.unwrap();
        return (inst, opt);
    }
}

/// The criterion suite: 100 bounded instances from one seed.
pub fn instance_suite(count: usize, seed: u64) -> Vec<(ProblemInstance, Optimum)> {
    let mut rng = rng(seed);
    (0..count).map(|_| random_synthesized(&mut rng)).collect()
}

pub fn random_x0(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(0.1..2.0))
}

/// Random gain with `|L| <= E` entrywise.
pub fn random_feasible_gain(rng: &mut ChaCha8Rng, e: &DMatrix<f64>) -> DMatrix<f64> {
    e.map(|v| v * rng.gen_range(-1.0..=1.0))
}

/// Gaussian elimination with complete pivoting; `None` when singular.
pub fn dense_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut rhs = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut best = (k, k, 0.0);
        for i in k..n {
            for j in k..n {
                if m[(i, j)].abs() > best.2 {
                    best = (i, j, m[(i, j)].abs());
                }
            }
        }
        if best.2 < 1e-11 {
            return None;
        }
        m.swap_rows(k, best.0);
        rhs.swap_rows(k, best.0);
        m.swap_columns(k, best.1);
        perm.swap(k, best.1);
        for i in k + 1..n {
            let f = m[(i, k)] / m[(k, k)];
            for j in k..n {
                m[(i, j)] -= f * m[(k, j)];
            }
            rhs[i] -= f * rhs[k];
        }
    }
    let mut y = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for j in i + 1..n {
            acc -= m[(i, j)] * y[j];
        }
        y[i] = acc / m[(i, i)];
    }
    let mut x = DVector::zeros(n);
    for (k, &p) in perm.iter().enumerate() {
        x[p] = y[k];
    }
    Some(x)
}

#[derive(Debug, Clone, PartialEq)]
pub enum VertexOracle {
    Infeasible,
    Best { objective: f64, z: DVector<f64> },
}

/// Best vertex of `{G z <= h, z >= 0}` by trying every choice of `k` active
/// constraints among the `rows + k` available. Only meaningful when the
/// feasible set is bounded.
pub fn vertex_enumeration(c: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> VertexOracle {
    let k = c.len();
    let rows = g.nrows();
    let total = rows + k;
    // stacked constraints: G z <= h, then -z <= 0
    let row = |i: usize| -> (Vec<f64>, f64) {
        if i < rows {
            (g.row(i).iter().copied().collect(), h[i])
        } else {
            let mut v = vec![0.0; k];
            v[i - rows] = -1.0;
            (v, 0.0)
        }
    };
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let mut a = DMatrix::zeros(k, k);
        let mut b = DVector::zeros(k);
        for (r, &i) in subset.iter().enumerate() {
            let (coef, rhs) = row(i);
            for j in 0..k {
                a[(r, j)] = coef[j];
            }
            b[r] = rhs;
        }
        if let Some(z) = dense_solve(&a, &b) {
            let feasible = (0..total).all(|i| {
                let (coef, rhs) = row(i);
                let lhs: f64 = coef.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
                lhs <= rhs + 1e-9 * (1.0 + rhs.abs())
            });
            if feasible {
                let obj = c.dot(&z);
                if best.as_ref().is_none_or(|(bo, _)| obj > *bo) {
                    best = Some((obj, z));
                }
            }
        }
        // next k-subset in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return match best {
                    None => VertexOracle::Infeasible,
                    Some((objective, z)) => VertexOracle::Best { objective, z },
                };
            }
            i -= 1;
            if subset[i] < total - k + i {
                subset[i] += 1;
                for j in i + 1..k {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// A random LP with at most 6 variables and 8 constraints whose feasible set
/// is bounded (the last row caps the sum of all variables). Some right-hand
/// sides are negative, so phase I is exercised and some draws are infeasible.
pub fn random_bounded_lp(rng: &mut ChaCha8Rng) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let k = rng.gen_range(1..=6);
    let rows = rng.gen_range(1..=8);
    let c = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
    let mut g = DMatrix::from_fn(rows, k, |_, _| {
        if rng.gen_bool(0.8) {
            rng.gen_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    let mut h = DVector::from_fn(rows, |_, _| rng.gen_range(-0.5..2.0));
    for j in 0..k {
        g[(rows - 1, j)] = rng.gen_range(0.5..1.5);
    }
    h[rows - 1] = rng.gen_range(1.0..5.0);
    (c, g, h)
}
