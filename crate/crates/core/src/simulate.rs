//! Closed-loop rollouts and the spectral checks used to certify them.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{self, SINGULAR_PIVOT_TOL};
use crate::model::ProblemInstance;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("matrix must be square and nonempty, got {0:?}")]
    Shape((usize, usize)),
    #[error("matrix entry ({row}, {col}) = {value} is negative")]
    Negative { row: usize, col: usize, value: f64 },
    #[error("power iteration stalled with bracket [{}, {}] after {} iterations", .0.lower, .0.upper, .0.iterations)]
    NotConverged(SpectralBracket),
}

/// Collatz-Wielandt bracket `lower <= rho <= upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBracket {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
}

/// Spectral radius of a nonnegative matrix by power iteration from the
/// all-ones vector.
///
/// The iteration runs on `M + I`, whose iterates stay strictly positive and
/// whose Perron root is `rho(M) + 1`. For the lower bound, every leading
/// subset of the components (largest first) is tried as the support of a
/// nonnegative test vector, so reducible matrices such as triangular ones
/// still get a tight bracket.
pub fn spectral_radius(
    m: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralBracket, SpectralError> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(SpectralError::Shape(m.shape()));
    }
    for i in 0..n {
        for j in 0..n {
            let value = m[(i, j)];
            if !(value >= 0.0) {
                return Err(SpectralError::Negative { row: i, col: j, value });
            }
        }
    }

    let mut v = DVector::from_element(n, 1.0);
    let mut w = DVector::zeros(n);
    let mut acc = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut bracket = SpectralBracket {
        estimate: f64::NAN,
        lower: 0.0,
        upper: f64::INFINITY,
        iterations: 0,
    };
    for it in 1..=max_iter.max(1) {
        w.gemv(1.0, m, &v, 0.0);
        w += &v;

        let upper = (0..n).map(|i| w[i] / v[i]).fold(f64::NEG_INFINITY, f64::max);

        order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut lower = f64::NEG_INFINITY;
        for k in 0..n {
            let j = order[k];
            for (i, a) in acc.iter_mut().enumerate() {
                *a += m[(i, j)] * v[j];
            }
            let support_min = order[..=k]
                .iter()
                .map(|&i| acc[i] / v[i])
                .fold(f64::INFINITY, f64::min);
            lower = lower.max(support_min);
        }

        let upper = upper - 1.0;
        bracket = SpectralBracket {
            lower: lower.max(0.0).min(upper),
            upper,
            estimate: 0.5 * (lower.max(0.0).min(upper) + upper),
            iterations: it,
        };
        if bracket.upper - bracket.lower <= tol {
            return Ok(bracket);
        }
        let scale = w.amax();
        v.copy_from(&w);
        v /= scale;
    }
    Err(SpectralError::NotConverged(bracket))
}

pub const SPECTRAL_TOL: f64 = 1e-10;
pub const SPECTRAL_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulateError {
    #[error("gain entry ({row}, {col}) violates |K| <= E")]
    InfeasibleGain { row: usize, col: usize },
    #[error("initial state component {0} is negative")]
    NegativeInitialState(usize),
    #[error("disturbance component {index} at step {t} is negative")]
    NegativeDisturbance { t: usize, index: usize },
    #[error("need {needed} disturbance samples, got {got}")]
    ShortDisturbanceSequence { needed: usize, got: usize },
    #[error("vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("closed loop is not stable (spectral radius in [{lower}, {upper}])")]
    Unstable { lower: f64, upper: f64 },
    #[error("closed-loop cost system is singular at column {column}")]
    SingularSystem { column: usize },
    #[error("no disturbance channel has F'p_K > gamma")]
    NoPositiveExcess,
    #[error("partial cost stayed below the bound for {horizon} steps (reached {cost})")]
    HorizonExhausted { horizon: usize, cost: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x(0..=T)`
    pub states: Vec<DVector<f64>>,
    /// `u(0..T)`
    pub inputs: Vec<DVector<f64>>,
    /// `w(0..T)`
    pub disturbances: Vec<DVector<f64>>,
    /// `c_0 = 0, c_T = sum_{t<T} s'x(t) + r'u(t) - gamma'w(t)`
    pub partial_costs: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn min_state(&self) -> f64 {
        self.states
            .iter()
            .flat_map(|x| x.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_gain(inst: &ProblemInstance, gain: &DMatrix<f64>) -> Result<(), SimulateError> {
    if gain.shape() != inst.e.shape() {
        return Err(SimulateError::Dimension {
            expected: inst.e.len(),
            got: gain.len(),
        });
    }
    for i in 0..gain.nrows() {
        for j in 0..gain.ncols() {
            if !(gain[(i, j)].abs() <= inst.e[(i, j)]) {
                return Err(SimulateError::InfeasibleGain { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn check_len(expected: usize, v: &DVector<f64>) -> Result<(), SimulateError> {
    if v.len() != expected {
        return Err(SimulateError::Dimension {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

/// Simulates `u = -K x` for `horizon` steps under the given disturbances.
pub fn rollout(
    inst: &ProblemInstance,
    gain: &DMatrix<f64>,
    x0: &DVector<f64>,
    disturbances: &[DVector<f64>],
    horizon: usize,
) -> Result<Trajectory, SimulateError> {
    check_gain(inst, gain)?;
    check_len(inst.n, x0)?;
    if let Some(i) = x0.iter().position(|&v| !(v >= 0.0)) {
        return Err(SimulateError::NegativeInitialState(i));
    }
    if disturbances.len() < horizon {
        return Err(SimulateError::ShortDisturbanceSequence {
            needed: horizon,
            got: disturbances.len(),
        });
    }
    for (t, w) in disturbances[..horizon].iter().enumerate() {
        check_len(inst.l, w)?;
        if let Some(index) = w.iter().position(|&v| !(v >= 0.0)) {
            return Err(SimulateError::NegativeDisturbance { t, index });
        }
    }

    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut partial_costs = Vec::with_capacity(horizon + 1);
    states.push(x0.clone());
    partial_costs.push(0.0);
    let mut cost = 0.0;
    for w in &disturbances[..horizon] {
        let x = states.last().unwrap();
        let u = -(gain * x);
        cost += inst.s.dot(x) + inst.r.dot(&u) - inst.gamma.dot(w);
        let mut next = &inst.f * w;
        next.gemv(1.0, &inst.a, x, 1.0);
        next.gemv(1.0, &inst.b, &u, 1.0);
        states.push(next);
        inputs.push(u);
        partial_costs.push(cost);
    }
    Ok(Trajectory {
        states,
        inputs,
        disturbances: disturbances[..horizon].to_vec(),
        partial_costs,
    })
}

pub fn zero_disturbances(l: usize, horizon: usize) -> Vec<DVector<f64>> {
    vec![DVector::zeros(l); horizon]
}

/// I.i.d. uniform samples on `[0, scale)` from a seeded ChaCha8 stream.
pub fn random_disturbances(l: usize, horizon: usize, scale: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..horizon)
        .map(|_| DVector::from_fn(l, |_, _| scale * rng.gen::<f64>()))
        .collect()
}

/// Stability of `A - B L`, judged on `|A - B L|` (equal to it whenever
/// `A >= |B| E`, and an upper bound on the spectral radius otherwise).
pub fn closed_loop_bracket(inst: &ProblemInstance, gain: &DMatrix<f64>) -> SpectralBracket {
    let m = (&inst.a - &inst.b * gain).abs();
    match spectral_radius(&m, SPECTRAL_TOL, SPECTRAL_MAX_ITER) {
        Ok(b) | Err(SpectralError::NotConverged(b)) => b,
        Err(e) => unreachable!("closed-loop matrix is square and nonnegative: {e}"),
    }
}

/// Cost vector of the undisturbed closed loop under `u = -L x`:
/// `p_L = (s - L'r) + (A - B L)' p_L`.
pub fn closed_loop_cost_vector(
    inst: &ProblemInstance,
    gain: &DMatrix<f64>,
) -> Result<DVector<f64>, SimulateError> {
    check_gain(inst, gain)?;
    let bracket = closed_loop_bracket(inst, gain);
    if !(bracket.upper < 1.0) {
        return Err(SimulateError::Unstable {
            lower: bracket.lower,
            upper: bracket.upper,
        });
    }
    let closed = &inst.a - &inst.b * gain;
    let lhs = DMatrix::identity(inst.n, inst.n) - closed.transpose();
    let rhs = &inst.s - gain.transpose() * &inst.r;
    linalg::solve(&lhs, &rhs, SINGULAR_PIVOT_TOL)
        .map_err(|s| SimulateError::SingularSystem { column: s.column })
}

/// Evidence that the value is infinite when `gamma < F'p` somewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct UnboundednessWitness {
    /// Disturbance channel that is loaded.
    pub component: usize,
    /// Constant disturbance applied at every step.
    pub disturbance: DVector<f64>,
    /// Long-run cost increase per step, `(F'p_K - gamma)'w`.
    pub growth_rate: f64,
    /// Closed-loop cost vector of the gain under test.
    pub closed_loop_p: DVector<f64>,
    /// First horizon whose partial cost exceeds the bound.
    pub t_exceed: usize,
    pub cost_at_exceed: f64,
}

/// Drives the channel with the largest `F'p_K - gamma` at unit intensity
/// until the running cost passes `bound`.
pub fn demonstrate_unboundedness(
    inst: &ProblemInstance,
    gain: &DMatrix<f64>,
    x0: &DVector<f64>,
    bound: f64,
    max_horizon: usize,
) -> Result<UnboundednessWitness, SimulateError> {
    check_len(inst.n, x0)?;
    if let Some(i) = x0.iter().position(|&v| !(v >= 0.0)) {
        return Err(SimulateError::NegativeInitialState(i));
    }
    let p_k = closed_loop_cost_vector(inst, gain)?;
    let excess = inst.f.transpose() * &p_k - &inst.gamma;
    let (component, growth_rate) = excess
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, v)| v > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(SimulateError::NoPositiveExcess)?;

    let mut w = DVector::zeros(inst.l);
    w[component] = 1.0;
    let fw = inst.f.column(component).into_owned();
    let closed = &inst.a - &inst.b * gain;
    // stage cost is (s - K'r)'x - gamma_j
    let state_weight = &inst.s - gain.transpose() * &inst.r;
    let gamma_j = inst.gamma[component];

    let mut x = x0.clone();
    let mut next = DVector::zeros(inst.n);
    let mut cost = 0.0;
    for t in 0..max_horizon {
        cost += state_weight.dot(&x) - gamma_j;
        if cost > bound {
            return Ok(UnboundednessWitness {
                component,
                disturbance: w,
                growth_rate,
                closed_loop_p: p_k,
                t_exceed: t + 1,
                cost_at_exceed: cost,
            });
        }
        next.copy_from(&fw);
        next.gemv(1.0, &closed, &x, 1.0);
        std::mem::swap(&mut x, &mut next);
    }
    Err(SimulateError::HorizonExhausted {
        horizon: max_horizon,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis;
    use approx::assert_abs_diff_eq;

    fn tank_gain() -> DMatrix<f64> {
        ProblemInstance::double_tank().e
    }

    #[test]
    fn identity_radius_is_one() {
        let b = spectral_radius(&DMatrix::identity(4, 4), 1e-12, 100).unwrap();
        assert_eq!((b.lower, b.upper), (1.0, 1.0));
    }

    #[test]
    fn triangular_radius_is_max_diagonal() {
        let inst = ProblemInstance::double_tank();
        let m = &inst.a - &inst.b * tank_gain();
        let b = spectral_radius(&m, 1e-12, 100_000).unwrap();
        assert!(b.lower <= 0.9648 + 1e-12 && b.upper >= 0.9648 - 1e-12);
        assert_abs_diff_eq!(b.estimate, 0.9648, epsilon = 1e-11);
    }

    #[test]
    fn zero_and_nilpotent_matrices() {
        let b = spectral_radius(&DMatrix::zeros(3, 3), 1e-12, 10).unwrap();
        assert_eq!(b.upper, 0.0);
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        // defective: the bracket only closes like 1/k
        let b = spectral_radius(&nil, 1e-3, 100_000).unwrap();
        assert_eq!(b.lower, 0.0);
        assert!(b.upper <= 1e-3 && b.iterations > 500);
    }

    #[test]
    fn negative_entry_rejected() {
        let m = DMatrix::from_row_slice(1, 1, &[-0.5]);
        assert!(matches!(spectral_radius(&m, 1e-9, 10), Err(SpectralError::Negative { .. })));
    }

    #[test]
    fn stalled_bracket_is_reported() {
        // eigenvalues 0.8 and 0.3
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.15, 0.6]);
        let Err(SpectralError::NotConverged(b)) = spectral_radius(&m, 0.0, 2) else {
            panic!()
        };
        assert!(b.lower <= 0.8 && 0.8 <= b.upper && b.upper > b.lower);
        let b = spectral_radius(&m, 1e-12, 10_000).unwrap();
        assert_abs_diff_eq!(b.estimate, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn rollout_zero_state_stays_zero() {
        let inst = ProblemInstance::double_tank();
        let traj = rollout(&inst, &tank_gain(), &DVector::zeros(2), &zero_disturbances(1, 50), 50).unwrap();
        assert!(traj.states.iter().all(|x| x.iter().all(|&v| v == 0.0)));
        assert!(traj.inputs.iter().all(|u| u[0] == 0.0));
        assert!(traj.partial_costs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn rollout_obeys_dynamics_and_input_bound() {
        let inst = ProblemInstance::double_tank();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let ws = random_disturbances(1, 200, 0.5, 7);
        let traj = rollout(&inst, &tank_gain(), &x0, &ws, 200).unwrap();
        for t in 0..200 {
            let x = &traj.states[t];
            let expect = &inst.a * x + &inst.b * &traj.inputs[t] + &inst.f * &traj.disturbances[t];
            assert_abs_diff_eq!(traj.states[t + 1], expect, epsilon = 1e-14);
            let bound = &inst.e * x;
            assert!(traj.inputs[t].abs().iter().zip(bound.iter()).all(|(u, b)| u <= b));
        }
        assert!(traj.min_state() >= 0.0);
    }

    #[test]
    fn rollout_rejects_bad_inputs() {
        let inst = ProblemInstance::double_tank();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let big = DMatrix::from_row_slice(1, 2, &[1.5, 0.0]);
        assert_eq!(
            rollout(&inst, &big, &x0, &zero_disturbances(1, 5), 5),
            Err(SimulateError::InfeasibleGain { row: 0, col: 0 })
        );
        let neg = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(
            rollout(&inst, &tank_gain(), &neg, &zero_disturbances(1, 5), 5),
            Err(SimulateError::NegativeInitialState(1))
        );
        let mut ws = zero_disturbances(1, 5);
        ws[3][0] = -0.1;
        assert_eq!(
            rollout(&inst, &tank_gain(), &x0, &ws, 5),
            Err(SimulateError::NegativeDisturbance { t: 3, index: 0 })
        );
        assert!(matches!(
            rollout(&inst, &tank_gain(), &x0, &ws, 9),
            Err(SimulateError::ShortDisturbanceSequence { needed: 9, got: 5 })
        ));
    }

    #[test]
    fn random_disturbances_are_reproducible() {
        assert_eq!(random_disturbances(3, 20, 1.0, 42), random_disturbances(3, 20, 1.0, 42));
        assert_ne!(random_disturbances(3, 20, 1.0, 42), random_disturbances(3, 20, 1.0, 43));
    }

    #[test]
    fn cost_vector_of_optimal_gain_matches_lp() {
        let inst = ProblemInstance::double_tank();
        let opt = synthesis::synthesize(&inst).unwrap().optimum.unwrap();
        let p_k = closed_loop_cost_vector(&inst, &opt.gain).unwrap();
        assert_abs_diff_eq!(p_k, opt.p, epsilon = 1e-6);
    }

    #[test]
    fn open_loop_cost_vector_is_resolvent() {
        let inst = ProblemInstance::double_tank();
        let p0 = closed_loop_cost_vector(&inst, &DMatrix::zeros(1, 2)).unwrap();
        // back substitution on the triangular system (I - A')p = s
        let p2 = 1.0 / (1.0 - 0.9648);
        let p1 = (1.0 + 0.0345 * p2) / (1.0 - 0.9648);
        assert_abs_diff_eq!(p0[1], p2, epsilon = 1e-9);
        assert_abs_diff_eq!(p0[0], p1, epsilon = 1e-9);
        assert_abs_diff_eq!(p0[0], 56.25, epsilon = 0.01);
        let opt = synthesis::synthesize(&inst).unwrap().optimum.unwrap();
        assert!(p0.iter().zip(opt.p.iter()).all(|(a, b)| a >= b));
    }

    #[test]
    fn unstable_loop_is_reported() {
        let inst = ProblemInstance::from_parts(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
            DVector::from_element(1, 1.0),
        );
        let err = closed_loop_cost_vector(&inst, &DMatrix::zeros(1, 1)).unwrap_err();
        assert!(matches!(err, SimulateError::Unstable { lower, .. } if lower >= 1.0));
    }

    #[test]
    fn low_gamma_blows_up_linearly() {
        let inst = ProblemInstance::double_tank().with_gamma(DVector::from_element(1, 1.0));
        let opt = synthesis::synthesize(&inst).unwrap().optimum.unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let bound = 10.0 * opt.value(&x0);
        let wit = demonstrate_unboundedness(&inst, &opt.gain, &x0, bound, 10_000_000).unwrap();
        assert_eq!(wit.component, 0);
        assert_abs_diff_eq!(wit.growth_rate, opt.gamma_min[0] - 1.0, epsilon = 1e-6);
        assert!(wit.cost_at_exceed > bound);

        // the same disturbance through the full rollout reaches the same cost
        let ws = vec![wit.disturbance.clone(); wit.t_exceed];
        let traj = rollout(&inst, &opt.gain, &x0, &ws, wit.t_exceed).unwrap();
        assert_abs_diff_eq!(
            *traj.partial_costs.last().unwrap(),
            wit.cost_at_exceed,
            epsilon = 1e-6 * wit.cost_at_exceed
        );
        assert!(traj.partial_costs[wit.t_exceed - 1] <= bound);
    }

    #[test]
    fn free_disturbance_grows_at_full_rate() {
        let mut inst = ProblemInstance::double_tank();
        inst.f = DMatrix::identity(2, 2);
        inst.gamma = DVector::zeros(2);
        inst.l = 2;
        let opt = synthesis::synthesize(&inst).unwrap().optimum.unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let wit = demonstrate_unboundedness(&inst, &opt.gain, &x0, 1e3, 1_000_000).unwrap();
        assert_abs_diff_eq!(wit.growth_rate, opt.p.max(), epsilon = 1e-6);
    }

    #[test]
    fn no_excess_is_a_caller_error() {
        let inst = ProblemInstance::double_tank();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(
            demonstrate_unboundedness(&inst, &tank_gain(), &x0, 100.0, 1000),
            Err(SimulateError::NoPositiveExcess)
        );
    }
}
