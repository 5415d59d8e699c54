//! Delay-optimal association: feasibility, the small-load closed form with
//! tier shutdown, and a general solver for the exact bound.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analytic::{
    self, bias_from_association, network_delay_bound_at, AnalyticError, Delay, NetworkParams,
    TierConfig, TierModel,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error("no association keeps every tier stable")]
    Infeasible,
    #[error("arrival rate {gamma} is not below the closed-form limit {limit}")]
    RegimeViolation { gamma: f64, limit: f64 },
    #[error("every tier was shut down")]
    NoActiveTier,
    #[error("solver stopped with residual {residual:e}")]
    ConvergenceFailure { residual: f64 },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
}

pub type Result<T, E = OptimizerError> = std::result::Result<T, E>;

/// Whether a tier's bound is finite for every association or only below a cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    AlwaysBounded,
    ConditionallyBounded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierCap {
    pub upper_cap: f64,
    pub regime: Regime,
    /// Arrival rate above which the tier becomes conditionally bounded.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleRegion {
    pub tiers: Vec<TierCap>,
    pub feasible: bool,
}

impl FeasibleRegion {
    pub fn contains(&self, association: &[f64]) -> bool {
        association.len() == self.tiers.len()
            && association
                .iter()
                .zip(&self.tiers)
                .all(|(&a, t)| a >= 0.0 && (a < t.upper_cap || (a == 1.0 && t.upper_cap == 1.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ClosedForm,
    Numerical,
}

/// Which solver [`optimize`] should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MethodChoice {
    #[default]
    Auto,
    ClosedForm,
    Numerical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub association: Vec<f64>,
    /// Biases normalised to `reference_tier`; shut-down tiers get 0.
    pub bias: Vec<f64>,
    /// The requested reference, or the first serving tier if that one was
    /// shut down.
    pub reference_tier: usize,
    pub delay: Delay,
    pub method: Method,
    pub shutdown_tiers: Vec<usize>,
    /// Relative stationarity residual at the returned point.
    pub residual: f64,
    /// Outer iterations (numerical) or elimination rounds (closed form).
    pub iterations: usize,
    /// Active-set size at the start of each elimination round.
    pub active_history: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub sum_tolerance: f64,
    pub stationarity_tolerance: f64,
    pub max_iterations: usize,
    /// Initial bracket for the multiplier; widened if it does not bracket.
    pub nu_bracket: Option<(f64, f64)>,
    pub reference_tier: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            sum_tolerance: 1e-10,
            stationarity_tolerance: 1e-8,
            max_iterations: 400,
            nu_bracket: None,
            reference_tier: 0,
        }
    }
}

fn participates(t: &TierConfig) -> bool {
    t.lambda > 0.0
}

fn models(tiers: &[TierConfig], params: &NetworkParams) -> Result<Vec<TierModel>> {
    params.validate()?;
    tiers.iter().try_for_each(TierConfig::validate)?;
    if !tiers.iter().any(participates) {
        return Err(AnalyticError::AllTiersExcluded.into());
    }
    Ok(analytic::tier_models(tiers, params, participates)?)
}

pub fn check_feasibility(tiers: &[TierConfig], params: &NetworkParams) -> Result<FeasibleRegion> {
    let ms = models(tiers, params)?;
    let gamma = params.arrival_rate;
    let caps: Vec<TierCap> = ms
        .iter()
        .map(|m| {
            if m.lambda == 0.0 {
                return TierCap {
                    upper_cap: 0.0,
                    regime: Regime::ConditionallyBounded,
                    threshold: 0.0,
                };
            }
            let threshold = m.arrival_threshold(params);
            if gamma > threshold {
                TierCap {
                    upper_cap: m.association_cap(),
                    regime: Regime::ConditionallyBounded,
                    threshold,
                }
            } else {
                TierCap {
                    upper_cap: 1.0,
                    regime: Regime::AlwaysBounded,
                    threshold,
                }
            }
        })
        .collect();
    let max_threshold = ms
        .iter()
        .filter(|m| m.lambda > 0.0)
        .map(|m| m.arrival_threshold(params))
        .fold(0.0, f64::max);
    let cap_sum: f64 = ms
        .iter()
        .filter(|m| m.lambda > 0.0)
        .map(|m| m.saturation_point())
        .sum();
    let infeasible = gamma > max_threshold && cap_sum < 1.0;
    Ok(FeasibleRegion {
        tiers: caps,
        feasible: !infeasible,
    })
}

/// Smallest full-load arrival threshold `(Z + 1) lambda_k R_k / (lambda_u L)` over
/// participating tiers; the closed form is only valid below it.
pub fn closed_form_limit(tiers: &[TierConfig], params: &NetworkParams) -> Result<f64> {
    let ms = models(tiers, params)?;
    Ok(ms
        .iter()
        .filter(|m| m.lambda > 0.0)
        .map(|m| m.arrival_threshold(params))
        .fold(f64::INFINITY, f64::min))
}

/// The small-load optimum over the active set `active`:
/// `A_k = lambda_k / S + lambda_k log2(1 + tau) sum_j lambda_j (W_k - W_j) / (gamma lambda_u L S)`.
fn closed_form_on(tiers: &[TierConfig], params: &NetworkParams, active: &[bool]) -> Vec<f64> {
    let total: f64 = tiers
        .iter()
        .zip(active)
        .filter(|(_, &on)| on)
        .map(|(t, _)| t.lambda)
        .sum();
    let spectral = (1.0 + params.sir_threshold).log2();
    let load = params.load_density();
    tiers
        .iter()
        .zip(active)
        .map(|(t, &on)| {
            if !on {
                return 0.0;
            }
            let spread: f64 = tiers
                .iter()
                .zip(active)
                .filter(|(_, &o)| o)
                .map(|(j, _)| j.lambda * (t.bandwidth - j.bandwidth))
                .sum();
            t.lambda / total + t.lambda * spectral * spread / (load * total)
        })
        .collect()
}

/// Repeatedly evaluates the closed form, shutting down tiers whose optimum is
/// negative, until every entry is non-negative.
pub fn algorithm1_shutdown(tiers: &[TierConfig], params: &NetworkParams) -> Result<Optimum> {
    models(tiers, params)?;
    let mut active: Vec<bool> = tiers.iter().map(participates).collect();
    let mut history = Vec::new();
    let association = loop {
        let n = active.iter().filter(|&&a| a).count();
        if n == 0 {
            return Err(OptimizerError::NoActiveTier);
        }
        history.push(n);
        let a = closed_form_on(tiers, params, &active);
        let negative: Vec<usize> = (0..a.len()).filter(|&k| active[k] && a[k] < 0.0).collect();
        if negative.is_empty() {
            break a;
        }
        for k in negative {
            active[k] = false;
        }
    };
    let shutdown: Vec<usize> = (0..tiers.len())
        .filter(|&k| participates(&tiers[k]) && !active[k])
        .collect();
    let rounds = history.len();
    finish(
        tiers,
        params,
        association,
        Method::ClosedForm,
        shutdown,
        rounds,
        history,
        SolverOptions::default().reference_tier,
    )
}

/// [`algorithm1_shutdown`] guarded by the closed form's validity condition.
pub fn closed_form_optimum(tiers: &[TierConfig], params: &NetworkParams) -> Result<Optimum> {
    closed_form_optimum_with(tiers, params, SolverOptions::default().reference_tier)
}

fn closed_form_optimum_with(
    tiers: &[TierConfig],
    params: &NetworkParams,
    reference: usize,
) -> Result<Optimum> {
    let limit = closed_form_limit(tiers, params)?;
    if !(params.arrival_rate < limit) || params.arrival_rate <= 0.0 {
        return Err(OptimizerError::RegimeViolation {
            gamma: params.arrival_rate,
            limit,
        });
    }
    let mut opt = algorithm1_shutdown(tiers, params)?;
    if reference != opt.reference_tier {
        let reference = serving_reference(&opt.association, reference);
        opt.bias = bias_from_association(&opt.association, tiers, params.alpha, reference)?;
        opt.reference_tier = reference;
    }
    Ok(opt)
}

fn serving_reference(association: &[f64], requested: usize) -> usize {
    if association.get(requested).is_some_and(|&a| a > 0.0) {
        requested
    } else {
        association.iter().position(|&a| a > 0.0).unwrap_or(requested)
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    tiers: &[TierConfig],
    params: &NetworkParams,
    association: Vec<f64>,
    method: Method,
    shutdown_tiers: Vec<usize>,
    iterations: usize,
    active_history: Vec<usize>,
    reference: usize,
) -> Result<Optimum> {
    let reference = serving_reference(&association, reference);
    let bias = bias_from_association(&association, tiers, params.alpha, reference)?;
    let biased: Vec<TierConfig> = tiers
        .iter()
        .zip(&bias)
        .map(|(t, &b)| TierConfig { bias: b, ..*t })
        .collect();
    let delay = network_delay_bound_at(&association, &biased, params)?;
    let residual = stationarity_residual(&association, &biased, params)?;
    Ok(Optimum {
        association,
        bias,
        reference_tier: reference,
        delay,
        method,
        shutdown_tiers,
        residual,
        iterations,
        active_history,
    })
}

/// Relative spread of `dD/dA_k` across tiers strictly inside their range,
/// plus any KKT violation by tiers at zero (whose marginal must not be below
/// the common level).
pub fn stationarity_residual(
    association: &[f64],
    tiers: &[TierConfig],
    params: &NetworkParams,
) -> Result<f64> {
    let grad = analytic::network_delay_gradient(association, tiers, params)?;
    let ms = analytic::tier_models(tiers, params, TierConfig::is_active)?;
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    for ((m, &a), &g) in ms.iter().zip(association).zip(&grad) {
        if m.weight == 0.0 {
            continue;
        }
        if a > 1e-9 * m.association_cap() {
            interior.push(g);
        } else {
            boundary.push(g);
        }
    }
    if interior.is_empty() {
        return Ok(0.0);
    }
    if interior.iter().any(|g| !g.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let level = interior.iter().sum::<f64>() / interior.len() as f64;
    if level <= 0.0 {
        return Ok(0.0);
    }
    let spread = interior
        .iter()
        .map(|g| (g - level).abs() / level)
        .fold(0.0, f64::max);
    let kkt = boundary
        .iter()
        .map(|g| ((level - g) / level).max(0.0))
        .fold(0.0, f64::max);
    Ok(spread.max(kkt))
}

const GRID: usize = 256;

/// One tier's weighted delay term restricted to its admissible interval.
struct TierTerm {
    model: TierModel,
    lo: f64,
    hi: f64,
    grid: Vec<f64>,
    marginals: Vec<f64>,
}

impl TierTerm {
    fn new(model: TierModel) -> Self {
        let cap = model.association_cap();
        let sat = model.saturation_point();
        let lo = 1e-12 * cap;
        let hi = if sat <= 1.0 { cap * (1.0 - 1e-12) } else { 1.0 };
        let grid: Vec<f64> = (0..=GRID)
            .map(|i| lo + (hi - lo) * i as f64 / GRID as f64)
            .collect();
        let marginals = grid.iter().map(|&a| model.marginal(a)).collect();
        Self {
            model,
            lo,
            hi,
            grid,
            marginals,
        }
    }

    fn value(&self, a: f64) -> f64 {
        self.model.weighted_delay(a)
    }

    fn marginal(&self, a: f64) -> f64 {
        self.model.marginal(a)
    }

    /// Root of `marginal - nu` on `[a, b]`, given a sign change.
    fn invert(&self, nu: f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if self.marginal(mid) < nu {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }

    /// Global minimiser of `value(A) - nu A` over `[lo, hi]`.
    fn response(&self, nu: f64) -> f64 {
        let mut best = self.lo;
        let mut best_val = self.value(self.lo) - nu * self.lo;
        let mut consider = |a: f64| {
            let v = self.value(a) - nu * a;
            if v < best_val {
                best = a;
                best_val = v;
            }
        };
        for i in 0..GRID {
            if self.marginals[i] < nu && self.marginals[i + 1] >= nu {
                consider(self.invert(nu, self.grid[i], self.grid[i + 1]));
            }
        }
        if self.marginals[GRID] < nu {
            consider(self.hi);
        }
        best
    }
}

fn total_response(terms: &[TierTerm], nu: f64) -> (Vec<f64>, f64) {
    let a: Vec<f64> = terms.iter().map(|t| t.response(nu)).collect();
    let s = a.iter().sum();
    (a, s)
}

/// Moves mass between tiers `i` and `j` to the best split of their current
/// total. Returns whether the objective improved.
fn exchange(terms: &[TierTerm], a: &mut [f64], i: usize, j: usize) -> bool {
    let (ti, tj) = (&terms[i], &terms[j]);
    let t_min = (ti.lo - a[i]).max(a[j] - tj.hi);
    let t_max = (ti.hi - a[i]).min(a[j] - tj.lo);
    if !(t_max > t_min) {
        return false;
    }
    let g = |t: f64| ti.value(a[i] + t) + tj.value(a[j] - t);
    let dg = |t: f64| ti.marginal(a[i] + t) - tj.marginal(a[j] - t);
    let n = 4 * GRID;
    let ts: Vec<f64> = (0..=n)
        .map(|k| t_min + (t_max - t_min) * k as f64 / n as f64)
        .collect();
    let (m, _) = ts
        .iter()
        .map(|&t| g(t))
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    let mut best_t = ts[m];
    let mut best_v = g(best_t);
    let (mut l, mut r) = (ts[m.saturating_sub(1)], ts[(m + 1).min(n)]);
    if dg(l) < 0.0 && dg(r) > 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (l + r);
            if mid <= l || mid >= r {
                break;
            }
            if dg(mid) < 0.0 {
                l = mid;
            } else {
                r = mid;
            }
        }
        let t = 0.5 * (l + r);
        let v = g(t);
        if v < best_v {
            best_t = t;
            best_v = v;
        }
    }
    let current = g(0.0);
    if best_v < current - 1e-15 * current.abs() {
        a[i] += best_t;
        a[j] -= best_t;
        true
    } else {
        false
    }
}

/// Minimises the exact network bound over the simplex.
///
/// The outer loop bisects a common multiplier `nu` until the tiers' best
/// responses sum to one. Each response is the global minimiser of the tier's
/// delay term minus `nu A`, so parts of the bound that curve the wrong way
/// are handled. If the responses jump over one, the split is finished by
/// pairwise exchanges between tiers.
pub fn numerical_optimum(
    tiers: &[TierConfig],
    params: &NetworkParams,
    options: &SolverOptions,
) -> Result<Optimum> {
    if !(options.sum_tolerance > 0.0) {
        return Err(OptimizerError::InvalidTolerance(options.sum_tolerance));
    }
    if !(options.stationarity_tolerance > 0.0) {
        return Err(OptimizerError::InvalidTolerance(options.stationarity_tolerance));
    }
    let region = check_feasibility(tiers, params)?;
    if !region.feasible {
        return Err(OptimizerError::Infeasible);
    }
    let ms = models(tiers, params)?;
    let on: Vec<usize> = (0..tiers.len()).filter(|&k| participates(&tiers[k])).collect();
    let mut association = vec![0.0; tiers.len()];

    if params.load_density() == 0.0 {
        // Every association gives the same bound; pick nearest-BS.
        let total: f64 = on.iter().map(|&k| tiers[k].lambda).sum();
        for &k in &on {
            association[k] = tiers[k].lambda / total;
        }
        return finish(tiers, params, association, Method::Numerical, vec![], 0, vec![], options.reference_tier);
    }

    let terms: Vec<TierTerm> = on.iter().map(|&k| TierTerm::new(ms[k])).collect();
    if terms.iter().map(|t| t.hi).sum::<f64>() < 1.0 {
        return Err(OptimizerError::Infeasible);
    }

    let (mut nu_lo, mut nu_hi) = options.nu_bracket.unwrap_or((0.0, 1.0));
    nu_lo = nu_lo.max(0.0);
    nu_hi = nu_hi.max(nu_lo);
    let mut iterations = 0;
    while total_response(&terms, nu_lo).1 > 1.0 {
        nu_lo *= 0.5;
        iterations += 1;
        if iterations > options.max_iterations || nu_lo < 1e-300 {
            nu_lo = 0.0;
            break;
        }
    }
    while total_response(&terms, nu_hi).1 < 1.0 {
        nu_hi = if nu_hi > 0.0 { 2.0 * nu_hi } else { 1.0 };
        iterations += 1;
        if iterations > options.max_iterations || !nu_hi.is_finite() {
            return Err(OptimizerError::ConvergenceFailure { residual: f64::INFINITY });
        }
    }

    let (mut a, mut s) = total_response(&terms, nu_hi);
    let mut converged = (s - 1.0).abs() <= options.sum_tolerance;
    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let mid = 0.5 * (nu_lo + nu_hi);
        if mid <= nu_lo || mid >= nu_hi {
            break;
        }
        let (am, sm) = total_response(&terms, mid);
        if (sm - 1.0).abs() <= options.sum_tolerance {
            a = am;
            s = sm;
            converged = true;
        } else if sm < 1.0 {
            nu_lo = mid;
        } else {
            nu_hi = mid;
            a = am;
            s = sm;
        }
    }

    if !converged {
        // The responses jump over the constraint: start from the low side and
        // hand the shortfall to the tier that jumps most.
        let (lo_a, lo_s) = total_response(&terms, nu_lo);
        let (hi_a, _) = total_response(&terms, nu_hi);
        let jumper = (0..terms.len())
            .max_by(|&x, &y| (hi_a[x] - lo_a[x]).total_cmp(&(hi_a[y] - lo_a[y])))
            .unwrap_or(0);
        a = lo_a;
        a[jumper] = (a[jumper] + 1.0 - lo_s).min(terms[jumper].hi);
        s = a.iter().sum();
    }

    // Put the sum exactly on one using the largest entry, which has the most room.
    if let Some(big) = (0..a.len()).max_by(|&x, &y| a[x].total_cmp(&a[y])) {
        a[big] += 1.0 - s;
    }

    for _ in 0..64 {
        let mut improved = false;
        for i in 0..terms.len() {
            for j in i + 1..terms.len() {
                improved |= exchange(&terms, &mut a, i, j);
            }
        }
        if !improved {
            break;
        }
    }

    for (slot, &k) in on.iter().enumerate() {
        association[k] = a[slot];
    }
    let opt = finish(
        tiers,
        params,
        association,
        Method::Numerical,
        vec![],
        iterations,
        vec![],
        options.reference_tier,
    )?;
    if opt.residual > options.stationarity_tolerance {
        return Err(OptimizerError::ConvergenceFailure {
            residual: opt.residual,
        });
    }
    Ok(opt)
}

/// Dispatches to the closed form when its validity condition holds.
pub fn optimize(
    tiers: &[TierConfig],
    params: &NetworkParams,
    choice: MethodChoice,
    options: &SolverOptions,
) -> Result<Optimum> {
    match choice {
        MethodChoice::ClosedForm => closed_form_optimum_with(tiers, params, options.reference_tier),
        MethodChoice::Numerical => numerical_optimum(tiers, params, options),
        MethodChoice::Auto => {
            let limit = closed_form_limit(tiers, params)?;
            if params.arrival_rate > 0.0 && params.arrival_rate < limit {
                closed_form_optimum_with(tiers, params, options.reference_tier)
            } else {
                numerical_optimum(tiers, params, options)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub samples: usize,
    pub psd_samples: usize,
    /// Smallest Hessian eigenvalue seen, with the point and trace it came from.
    pub worst_min_eigenvalue: f64,
    pub worst_trace: f64,
    pub worst_point: Vec<f64>,
}

impl ConvexityReport {
    pub fn all_psd(&self) -> bool {
        self.psd_samples == self.samples
    }
}

/// Samples interior feasible points and checks the Hessian of the bound in
/// the `K - 1` free coordinates for positive semidefiniteness.
pub fn verify_convexity(
    tiers: &[TierConfig],
    params: &NetworkParams,
    samples: usize,
    seed: u64,
) -> Result<ConvexityReport> {
    let region = check_feasibility(tiers, params)?;
    if !region.feasible {
        return Err(OptimizerError::Infeasible);
    }
    let ms = models(tiers, params)?;
    let on: Vec<usize> = (0..tiers.len()).filter(|&k| participates(&tiers[k])).collect();
    let terms: Vec<TierTerm> = on.iter().map(|&k| TierTerm::new(ms[k])).collect();
    let n = terms.len();
    let mut report = ConvexityReport {
        samples: 0,
        psd_samples: 0,
        worst_min_eigenvalue: f64::INFINITY,
        worst_trace: 0.0,
        worst_point: vec![],
    };
    if n < 2 {
        report.samples = samples;
        report.psd_samples = samples;
        report.worst_min_eigenvalue = 0.0;
        return Ok(report);
    }
    let reduced_gradient = |a: &[f64]| -> Vec<f64> {
        let last = terms[n - 1].marginal(a[n - 1]);
        (0..n - 1).map(|i| terms[i].marginal(a[i]) - last).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = 0;
    let mut attempts = 0usize;
    while drawn < samples {
        attempts += 1;
        if attempts > 1000 * samples.max(1) {
            return Err(OptimizerError::ConvergenceFailure {
                residual: f64::INFINITY,
            });
        }
        // Walk a random distance from the cap-proportional centre towards a
        // uniform simplex point, staying inside the caps. Plain rejection
        // from the simplex starves when the feasible slice is thin.
        let e: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
        let total: f64 = e.iter().sum();
        let target: Vec<f64> = e.iter().map(|x| x / total).collect();
        let cap_sum: f64 = terms.iter().map(|t| t.hi).sum();
        let centre: Vec<f64> = terms.iter().map(|t| t.hi / cap_sum).collect();
        let reach = terms
            .iter()
            .zip(centre.iter().zip(&target))
            .map(|(t, (&c, &d))| {
                if d > c {
                    (t.hi * (1.0 - 1e-3) - c) / (d - c)
                } else if d < c {
                    (c - t.lo * 1e3) / (c - d)
                } else {
                    1.0
                }
            })
            .fold(1.0f64, f64::min)
            .max(0.0);
        let s = reach * rng.random::<f64>();
        let a: Vec<f64> = centre.iter().zip(&target).map(|(&c, &d)| c + s * (d - c)).collect();
        let inside = a.iter().zip(&terms).all(|(&ak, t)| {
            let margin = 1e-4 * ak;
            ak - margin > t.lo && ak + margin < t.hi
        });
        if !inside {
            continue;
        }
        drawn += 1;
        let mut h = DMatrix::<f64>::zeros(n - 1, n - 1);
        for j in 0..n - 1 {
            let step = 1e-6 * a[j];
            let mut up = a.clone();
            let mut dn = a.clone();
            up[j] += step;
            up[n - 1] -= step;
            dn[j] -= step;
            dn[n - 1] += step;
            let gu = reduced_gradient(&up);
            let gd = reduced_gradient(&dn);
            for i in 0..n - 1 {
                h[(i, j)] = (gu[i] - gd[i]) / (2.0 * step);
            }
        }
        let sym = (&h + h.transpose()) * 0.5;
        let trace = sym.trace();
        let min_eig = SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig > -1e-6 * trace.abs() {
            report.psd_samples += 1;
        }
        if min_eig < report.worst_min_eigenvalue {
            report.worst_min_eigenvalue = min_eig;
            report.worst_trace = trace;
            let mut full = vec![0.0; tiers.len()];
            for (slot, &k) in on.iter().enumerate() {
                full[k] = a[slot];
            }
            report.worst_point = full;
        }
    }
    report.samples = drawn;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{dbm_to_watts, linear_to_db};
    use approx::assert_relative_eq;

    fn table(w1: f64, w2: f64) -> Vec<TierConfig> {
        vec![
            TierConfig {
                lambda: 1e-4,
                power: dbm_to_watts(46.0),
                bandwidth: w1,
                bias: 1.0,
            },
            TierConfig {
                lambda: 5e-4,
                power: dbm_to_watts(35.0),
                bandwidth: w2,
                bias: 1.0,
            },
        ]
    }

    fn params(gamma: f64) -> NetworkParams {
        NetworkParams {
            user_intensity: 1e-2,
            arrival_rate: gamma,
            mean_packet_length: 1e5,
            sir_threshold: 1.0,
            alpha: 4.0,
        }
    }

    /// Brute-force minimiser of the two-tier bound over a fine A_1 grid.
    fn grid_oracle(tiers: &[TierConfig], p: &NetworkParams, n: usize) -> (f64, f64) {
        let mut best = (f64::NAN, f64::INFINITY);
        for i in 1..n {
            let a1 = i as f64 / n as f64;
            let d = network_delay_bound_at(&[a1, 1.0 - a1], tiers, p).unwrap().seconds();
            if d < best.1 {
                best = (a1, d);
            }
        }
        best
    }

    #[test]
    fn feasibility_examples() {
        let tiers = table(1e7, 6e6);
        let r = check_feasibility(&tiers, &params(1.0)).unwrap();
        assert!(r.feasible);
        assert!(r.tiers.iter().all(|t| t.upper_cap == 1.0 && t.regime == Regime::AlwaysBounded));
        assert_relative_eq!(r.tiers[0].threshold, std::f64::consts::FRAC_PI_4 + 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.tiers[0].threshold, 1.785, epsilon = 1e-3);
        let r = check_feasibility(&tiers, &params(1.9)).unwrap();
        assert_eq!(r.tiers[0].regime, Regime::ConditionallyBounded);
        assert_relative_eq!(r.tiers[0].upper_cap, 1e3 / (1.9e3 - 1e3 * std::f64::consts::FRAC_PI_4), max_relative = 1e-12);
        assert!(!check_feasibility(&tiers, &params(100.0)).unwrap().feasible);
    }

    #[test]
    fn closed_form_table_point() {
        let opt = closed_form_optimum(&table(1e7, 6e6), &params(1.0)).unwrap();
        assert_relative_eq!(opt.association[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(opt.association[1], 0.5, epsilon = 1e-12);
        assert_eq!(opt.method, Method::ClosedForm);
        assert_relative_eq!(linear_to_db(opt.bias[1]), -2.98, epsilon = 0.005);
    }

    #[test]
    fn closed_form_equal_bandwidth_is_nearest_bs() {
        let tiers = table(1e7, 1e7);
        let opt = closed_form_optimum(&tiers, &params(1.0)).unwrap();
        let total = tiers[0].lambda + tiers[1].lambda;
        assert_eq!(opt.association, vec![tiers[0].lambda / total, tiers[1].lambda / total]);
        assert_relative_eq!(opt.bias[1], tiers[0].power / tiers[1].power, max_relative = 1e-10);
    }

    #[test]
    fn closed_form_regime_guard() {
        assert!(matches!(
            closed_form_optimum(&table(1e7, 6e6), &params(1.9)),
            Err(OptimizerError::RegimeViolation { .. })
        ));
    }

    #[test]
    fn shutdown_three_tiers() {
        let mut tiers = table(1e7, 1e7);
        tiers[1].lambda = 1e-4;
        tiers.push(TierConfig {
            lambda: 1e-4,
            power: 1.0,
            bandwidth: 1e4,
            bias: 1.0,
        });
        let p = params(0.05);
        let opt = algorithm1_shutdown(&tiers, &p).unwrap();
        assert_eq!(opt.shutdown_tiers, vec![2]);
        assert_eq!(opt.association[2], 0.0);
        assert_eq!(opt.bias[2], 0.0);
        assert!(opt.active_history.windows(2).all(|w| w[1] < w[0]));
        assert!(opt.iterations <= 3);
        // two-tier closed form as oracle: equal bandwidths, equal densities
        assert_relative_eq!(opt.association[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(opt.association[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn shut_down_reference_moves_to_first_serving_tier() {
        let mut tiers = table(1e4, 1e7);
        tiers.push(TierConfig { bandwidth: 1e7, ..tiers[1] });
        let opt = algorithm1_shutdown(&tiers, &params(0.05)).unwrap();
        assert_eq!(opt.shutdown_tiers, vec![0]);
        assert_eq!(opt.reference_tier, 1);
        assert_eq!(opt.bias[1], 1.0);
        assert_eq!(opt.bias[0], 0.0);
        assert_relative_eq!(opt.bias[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_tier_gets_everything() {
        let tiers = &table(1e7, 6e6)[..1];
        assert_eq!(algorithm1_shutdown(tiers, &params(1.0)).unwrap().association, vec![1.0]);
        let opt = numerical_optimum(tiers, &params(1.0), &SolverOptions::default()).unwrap();
        assert_relative_eq!(opt.association[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn numerical_symmetric_tiers_split_evenly() {
        let t = table(1e7, 6e6)[0];
        for k in 2..=4 {
            let tiers = vec![t; k];
            let opt = numerical_optimum(&tiers, &params(1.0), &SolverOptions::default()).unwrap();
            for a in &opt.association {
                assert_relative_eq!(*a, 1.0 / k as f64, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn numerical_matches_grid_oracle() {
        for &(w2, gamma) in &[(6e6, 1.5), (6e6, 1.9), (6e6, 1.0), (4e6, 1.9), (1e7, 2.5)] {
            let tiers = table(1e7, w2);
            let p = params(gamma);
            let opt = numerical_optimum(&tiers, &p, &SolverOptions::default()).unwrap();
            let (a1, d) = grid_oracle(&tiers, &p, 200_000);
            assert!(opt.delay.seconds() <= d * (1.0 + 1e-12), "w2 {w2} gamma {gamma}");
            assert!((opt.association[0] - a1).abs() < 2e-4, "w2 {w2} gamma {gamma}: {} vs {a1}", opt.association[0]);
        }
    }

    #[test]
    fn numerical_beats_random_points() {
        let tiers = table(1e7, 6e6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &gamma in &[0.5, 1.0, 1.9] {
            let p = params(gamma);
            let opt = numerical_optimum(&tiers, &p, &SolverOptions::default()).unwrap();
            for _ in 0..1000 {
                let a1: f64 = rng.random();
                let d = network_delay_bound_at(&[a1, 1.0 - a1], &tiers, &p).unwrap();
                assert!(opt.delay.seconds() <= d.seconds());
            }
        }
    }

    #[test]
    fn numerical_is_bracket_independent() {
        let tiers = table(1e7, 6e6);
        for &gamma in &[1.0, 1.5, 1.9] {
            let p = params(gamma);
            let a = numerical_optimum(&tiers, &p, &SolverOptions::default()).unwrap();
            let b = numerical_optimum(
                &tiers,
                &p,
                &SolverOptions {
                    nu_bracket: Some((1e-3, 1e3)),
                    ..SolverOptions::default()
                },
            )
            .unwrap();
            for (x, y) in a.association.iter().zip(&b.association) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn numerical_reports_infeasible() {
        assert_eq!(
            numerical_optimum(&table(1e7, 6e6), &params(100.0), &SolverOptions::default()),
            Err(OptimizerError::Infeasible)
        );
    }

    #[test]
    fn optimum_delay_matches_bound_at_bias() {
        let tiers = table(1e7, 6e6);
        let p = params(1.9);
        let opt = numerical_optimum(&tiers, &p, &SolverOptions::default()).unwrap();
        let biased: Vec<TierConfig> = tiers
            .iter()
            .zip(&opt.bias)
            .map(|(t, &b)| TierConfig { bias: b, ..*t })
            .collect();
        let a = analytic::association_probability(&biased, 4.0).unwrap();
        for (x, y) in a.iter().zip(&opt.association) {
            assert!((x - y).abs() < 1e-10);
        }
        assert_relative_eq!(
            analytic::network_delay_bound(&biased, &p).unwrap().seconds(),
            opt.delay.seconds(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn auto_dispatch() {
        let tiers = table(1e7, 6e6);
        let o = SolverOptions::default();
        assert_eq!(optimize(&tiers, &params(1.0), MethodChoice::Auto, &o).unwrap().method, Method::ClosedForm);
        assert_eq!(optimize(&tiers, &params(1.9), MethodChoice::Auto, &o).unwrap().method, Method::Numerical);
    }

    #[test]
    fn convexity_report_runs() {
        let r = verify_convexity(&table(1e7, 6e6), &params(1.9), 50, 1).unwrap();
        assert_eq!(r.samples, 50);
        assert!(r.worst_min_eigenvalue.is_finite());
        assert_eq!(r.worst_point.len(), 2);
    }

    #[test]
    fn convexity_fails_at_light_load() {
        // Two identical tiers at gamma -> 0: the bound expands as
        // w L / R (1 + rho + rho^2 + ...) with rho = cA/a - Z c^2 A^3 / a^2 + ...,
        // so each term curves like 2 - 6 Z A and the line through A_1 + A_2 = 1
        // like 4 - 6 Z, negative for Z = pi/4.
        let t = table(1e7, 6e6)[0];
        let r = verify_convexity(&[t, t], &params(0.01), 20, 3).unwrap();
        assert_eq!(r.psd_samples, 0);
        let heavy = verify_convexity(&table(1e7, 6e6), &params(1.5), 100, 3).unwrap();
        assert!(heavy.all_psd());
    }
}
