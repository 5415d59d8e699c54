//! Closed-form analysis of a K-tier network under the thinned-PPP
//! approximation: association probabilities, SIR coverage, per-tier traffic
//! intensity and the Jensen lower bound on mean queuing delay.
//!
//! Everything here is pure and works in linear units.

use std::f64::consts::LN_2;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("path-loss exponent must exceed 2, got {0}")]
    InvalidAlpha(f64),
    #[error("SIR threshold must be non-negative and finite, got {0}")]
    InvalidTau(f64),
    #[error("invalid {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("every tier is excluded (zero density, power or bias)")]
    AllTiersExcluded,
    #[error("tier {tier} has zero association probability")]
    DegenerateTier { tier: usize },
    #[error("reference tier {tier} has zero association probability")]
    InvalidReference { tier: usize },
    #[error("tier index {tier} out of range ({tiers} tiers)")]
    TierOutOfRange { tier: usize, tiers: usize },
    #[error("expected {expected} association probabilities, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

pub type Result<T, E = AnalyticError> = std::result::Result<T, E>;

/// Per-tier deployment parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierConfig {
    /// BS intensity in m^-2.
    pub lambda: f64,
    /// Transmit power in watts.
    pub power: f64,
    /// Tier bandwidth in Hz.
    pub bandwidth: f64,
    /// Linear biasing factor. Zero excludes the tier from association.
    pub bias: f64,
}

impl TierConfig {
    pub fn validate(&self) -> Result<()> {
        check("tier density", self.lambda, |v| v >= 0.0)?;
        check("tier power", self.power, |v| v > 0.0)?;
        check("tier bandwidth", self.bandwidth, |v| v >= 0.0)?;
        check("tier bias", self.bias, |v| v >= 0.0)?;
        Ok(())
    }

    /// Whether the tier can receive users at all.
    pub fn is_active(&self) -> bool {
        self.lambda > 0.0 && self.power > 0.0 && self.bias > 0.0
    }
}

/// Network-wide traffic and propagation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkParams {
    /// User intensity in m^-2.
    pub user_intensity: f64,
    /// Packet arrival rate per user, packets/s.
    pub arrival_rate: f64,
    /// Mean packet length in bits.
    pub mean_packet_length: f64,
    /// Linear SIR threshold.
    pub sir_threshold: f64,
    /// Path-loss exponent.
    pub alpha: f64,
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        check("user intensity", self.user_intensity, |v| v > 0.0)?;
        check("arrival rate", self.arrival_rate, |v| v >= 0.0)?;
        check("mean packet length", self.mean_packet_length, |v| v > 0.0)?;
        if !(self.sir_threshold.is_finite() && self.sir_threshold > 0.0) {
            return Err(AnalyticError::InvalidTau(self.sir_threshold));
        }
        if !(self.alpha.is_finite() && self.alpha > 2.0) {
            return Err(AnalyticError::InvalidAlpha(self.alpha));
        }
        Ok(())
    }

    /// `gamma * lambda_u * L`: offered bits per second per unit area.
    pub fn load_density(&self) -> f64 {
        self.arrival_rate * self.user_intensity * self.mean_packet_length
    }
}

fn check(name: &'static str, value: f64, ok: impl Fn(f64) -> bool) -> Result<()> {
    if value.is_finite() && ok(value) {
        Ok(())
    } else {
        Err(AnalyticError::InvalidParameter { name, value })
    }
}

fn validate_all(tiers: &[TierConfig], params: &NetworkParams) -> Result<()> {
    params.validate()?;
    tiers.iter().try_for_each(TierConfig::validate)
}

/// A delay that may be infinite because the queue is unstable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delay {
    Bounded(f64),
    Unbounded,
}

impl Delay {
    fn from_value(v: f64) -> Self {
        if v.is_finite() {
            Delay::Bounded(v)
        } else {
            Delay::Unbounded
        }
    }

    pub fn seconds(self) -> f64 {
        match self {
            Delay::Bounded(s) => s,
            Delay::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_bounded(self) -> bool {
        matches!(self, Delay::Bounded(_))
    }
}

impl fmt::Display for Delay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delay::Bounded(s) => write!(f, "{s}"),
            Delay::Unbounded => f.write_str("inf"),
        }
    }
}

/// The interference integral
/// `Z(tau, alpha) = tau^(2/alpha) * int_{tau^(-2/alpha)}^inf du / (1 + u^(alpha/2))`.
///
/// `alpha = 4` has the closed form `sqrt(tau) * atan(sqrt(tau))`. Other
/// exponents substitute `u = tau^(-2/alpha) / t`, which maps the tail onto
/// `(0, 1]` as `tau * int_0^1 t^(alpha/2 - 2) / (tau t^(alpha/2) + 1) dt`,
/// then integrate with double-exponential quadrature.
pub fn compute_z(tau: f64, alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 2.0) {
        return Err(AnalyticError::InvalidAlpha(alpha));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(AnalyticError::InvalidTau(tau));
    }
    if tau == 0.0 {
        return Ok(0.0);
    }
    if alpha == 4.0 {
        let s = tau.sqrt();
        return Ok(s * s.atan());
    }
    // t = s^k with k = 1/(alpha/2 - 1) removes the endpoint singularity.
    let half = alpha / 2.0;
    let k = 1.0 / (half - 1.0);
    let integrand = |s: f64| k / (tau * s.powf(k * half) + 1.0);
    let out = quadrature::integrate(integrand, 0.0, 1.0, 1e-10 / tau.max(1.0));
    Ok(tau * out.integral)
}

/// `A_k = lambda_k (P_k B_k)^(2/alpha) / sum_j lambda_j (P_j B_j)^(2/alpha)`.
pub fn association_probability(tiers: &[TierConfig], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha.is_finite() && alpha > 2.0) {
        return Err(AnalyticError::InvalidAlpha(alpha));
    }
    tiers.iter().try_for_each(TierConfig::validate)?;
    let weights: Vec<f64> = tiers
        .iter()
        .map(|t| {
            if t.is_active() {
                t.lambda * (t.power * t.bias).powf(2.0 / alpha)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(AnalyticError::AllTiersExcluded);
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Fixed-rate link throughput `W log2(1 + tau)` in bits/s.
pub fn tier_rate(tier: &TierConfig, tau: f64) -> f64 {
    tier.bandwidth * (1.0 + tau).ln() / LN_2
}

/// Packets per second for a user of this tier.
pub fn service_rate(tier: &TierConfig, tau: f64, mean_packet_length: f64) -> f64 {
    tier_rate(tier, tau) / mean_packet_length
}

/// `P[SIR_k > tau] = 1 / (A_k rho_k Z + 1)`.
pub fn sir_coverage_tier(association: f64, traffic_intensity: f64, z: f64) -> f64 {
    1.0 / (association * traffic_intensity * z + 1.0)
}

/// One tier's contribution to the network delay bound, as a function of its
/// association probability. The optimizer works entirely through this.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierModel {
    pub lambda: f64,
    /// `R_k` in bits/s.
    pub rate: f64,
    /// `lambda_k / sum_j lambda_j` over participating tiers.
    pub weight: f64,
    pub z: f64,
    /// `gamma lambda_u L`.
    pub load: f64,
    pub packet_length: f64,
}

impl TierModel {
    pub fn new(tier: &TierConfig, params: &NetworkParams, z: f64, total_lambda: f64) -> Self {
        Self {
            lambda: tier.lambda,
            rate: tier_rate(tier, params.sir_threshold),
            weight: if total_lambda > 0.0 {
                tier.lambda / total_lambda
            } else {
                0.0
            },
            z,
            load: params.load_density(),
            packet_length: params.mean_packet_length,
        }
    }

    /// `lambda_k R_k`: service capacity per unit area.
    fn capacity(&self) -> f64 {
        self.lambda * self.rate
    }

    /// Average traffic intensity for association probability `a`:
    /// the positive root of `A rho^2 Z lambda R + rho lambda R = gamma lambda_u L A`,
    /// written as `2 c A / (lR + sqrt((lR)^2 + 4 c lR Z A^2))` so that it stays
    /// accurate as `A -> 0` or `gamma -> 0`.
    pub fn traffic_intensity(&self, a: f64) -> f64 {
        if a <= 0.0 || self.load == 0.0 {
            return 0.0;
        }
        let cap = self.capacity();
        let s = (cap * cap + 4.0 * self.load * cap * self.z * a * a).sqrt();
        2.0 * self.load * a / (cap + s)
    }

    /// `d rho / d A = 2 c lR / (s (lR + s))`, strictly positive.
    pub fn traffic_intensity_derivative(&self, a: f64) -> f64 {
        let cap = self.capacity();
        if cap == 0.0 {
            return if self.load > 0.0 { f64::INFINITY } else { 0.0 };
        }
        let a = a.max(0.0);
        let s = (cap * cap + 4.0 * self.load * cap * self.z * a * a).sqrt();
        2.0 * self.load * cap / (s * (cap + s))
    }

    /// Linearised intensity `gamma lambda_u L A / (lambda R)`.
    pub fn small_gamma_traffic_intensity(&self, a: f64) -> f64 {
        if a <= 0.0 || self.load == 0.0 {
            return 0.0;
        }
        self.load * a / self.capacity()
    }

    pub fn delay(&self, a: f64) -> Delay {
        delay_bound_tier(self.traffic_intensity(a), self.rate, self.packet_length)
    }

    /// Weighted contribution to the network bound; `+inf` when unstable.
    pub fn weighted_delay(&self, a: f64) -> f64 {
        self.weight * self.delay(a).seconds()
    }

    /// `d/dA` of [`Self::weighted_delay`]: `w L rho' / (R (1 - rho)^2)`.
    pub fn marginal(&self, a: f64) -> f64 {
        let rho = self.traffic_intensity(a);
        if rho >= 1.0 || self.rate <= 0.0 {
            return f64::INFINITY;
        }
        self.weight * self.packet_length * self.traffic_intensity_derivative(a)
            / (self.rate * (1.0 - rho) * (1.0 - rho))
    }

    /// Arrival rate above which this tier's bound is only conditionally
    /// finite: `(Z + 1) lambda R / (lambda_u L)`, expressed as a `gamma`.
    pub fn arrival_threshold(&self, params: &NetworkParams) -> f64 {
        (self.z + 1.0) * self.capacity() / (params.user_intensity * params.mean_packet_length)
    }

    /// Largest association probability keeping `rho < 1`:
    /// `min(1, lambda R / (gamma lambda_u L - lambda R Z))`.
    pub fn association_cap(&self) -> f64 {
        let denom = self.load - self.capacity() * self.z;
        if denom <= 0.0 {
            1.0
        } else {
            (self.capacity() / denom).min(1.0)
        }
    }

    /// The unclamped boundary `lambda R / (gamma lambda_u L - lambda R Z)`;
    /// `+inf` when the tier can never saturate.
    pub fn saturation_point(&self) -> f64 {
        let denom = self.load - self.capacity() * self.z;
        if denom <= 0.0 {
            f64::INFINITY
        } else {
            self.capacity() / denom
        }
    }
}

/// Models for every tier, weighted over the tiers `participating` selects.
pub(crate) fn tier_models(
    tiers: &[TierConfig],
    params: &NetworkParams,
    participating: impl Fn(&TierConfig) -> bool,
) -> Result<Vec<TierModel>> {
    let z = compute_z(params.sir_threshold, params.alpha)?;
    let total: f64 = tiers
        .iter()
        .filter(|t| participating(t))
        .map(|t| t.lambda)
        .sum();
    Ok(tiers
        .iter()
        .map(|t| {
            let mut m = TierModel::new(t, params, z, total);
            if !participating(t) {
                m.weight = 0.0;
            }
            m
        })
        .collect())
}

fn tier_index(tiers: &[TierConfig], k: usize) -> Result<()> {
    if k >= tiers.len() {
        Err(AnalyticError::TierOutOfRange {
            tier: k,
            tiers: tiers.len(),
        })
    } else {
        Ok(())
    }
}

/// Average traffic intensity of tier `k` at the association implied by the
/// configured biases.
pub fn avg_traffic_intensity(k: usize, tiers: &[TierConfig], params: &NetworkParams) -> Result<f64> {
    validate_all(tiers, params)?;
    tier_index(tiers, k)?;
    let a = association_probability(tiers, params.alpha)?;
    if a[k] == 0.0 {
        return Err(AnalyticError::DegenerateTier { tier: k });
    }
    let models = tier_models(tiers, params, TierConfig::is_active)?;
    Ok(models[k].traffic_intensity(a[k]))
}

/// The small-`gamma` linearisation of [`avg_traffic_intensity`].
pub fn small_gamma_traffic_intensity(
    k: usize,
    tiers: &[TierConfig],
    params: &NetworkParams,
) -> Result<f64> {
    validate_all(tiers, params)?;
    tier_index(tiers, k)?;
    let a = association_probability(tiers, params.alpha)?;
    if a[k] == 0.0 {
        return Err(AnalyticError::DegenerateTier { tier: k });
    }
    let models = tier_models(tiers, params, TierConfig::is_active)?;
    Ok(models[k].small_gamma_traffic_intensity(a[k]))
}

/// `L / (R (1 - rho))`, or [`Delay::Unbounded`] once `rho >= 1`.
pub fn delay_bound_tier(traffic_intensity: f64, rate: f64, packet_length: f64) -> Delay {
    if !(traffic_intensity < 1.0) || rate <= 0.0 {
        return Delay::Unbounded;
    }
    Delay::from_value(packet_length / (rate * (1.0 - traffic_intensity)))
}

/// Network delay bound at an explicit association vector. Tiers with zero
/// density or zero bias are switched off and carry no weight.
pub fn network_delay_bound_at(
    association: &[f64],
    tiers: &[TierConfig],
    params: &NetworkParams,
) -> Result<Delay> {
    validate_all(tiers, params)?;
    if association.len() != tiers.len() {
        return Err(AnalyticError::LengthMismatch {
            expected: tiers.len(),
            got: association.len(),
        });
    }
    let models = tier_models(tiers, params, TierConfig::is_active)?;
    if models.iter().all(|m| m.weight == 0.0) {
        return Err(AnalyticError::AllTiersExcluded);
    }
    let total = models
        .iter()
        .zip(association)
        .filter(|(m, _)| m.weight > 0.0)
        .map(|(m, &a)| m.weighted_delay(a))
        .sum();
    Ok(Delay::from_value(total))
}

/// Partial derivatives of [`network_delay_bound_at`] with respect to each
/// `A_k`, treating the association probabilities as independent. Switched-off
/// tiers get 0; unstable tiers get `+inf`.
pub fn network_delay_gradient(
    association: &[f64],
    tiers: &[TierConfig],
    params: &NetworkParams,
) -> Result<Vec<f64>> {
    validate_all(tiers, params)?;
    if association.len() != tiers.len() {
        return Err(AnalyticError::LengthMismatch {
            expected: tiers.len(),
            got: association.len(),
        });
    }
    let models = tier_models(tiers, params, TierConfig::is_active)?;
    Ok(models
        .iter()
        .zip(association)
        .map(|(m, &a)| if m.weight > 0.0 { m.marginal(a) } else { 0.0 })
        .collect())
}

/// `sum_k lambda_k / sum_j lambda_j * L / (R_k (1 - rho_k))` at the
/// configured biases.
pub fn network_delay_bound(tiers: &[TierConfig], params: &NetworkParams) -> Result<Delay> {
    let a = association_probability(tiers, params.alpha)?;
    network_delay_bound_at(&a, tiers, params)
}

/// `sum_k A_k / (A_k rho_k Z + 1)`. An overloaded tier is busy with
/// probability one, so `rho_k` is clamped to 1 here.
pub fn network_sir_coverage(tiers: &[TierConfig], params: &NetworkParams) -> Result<f64> {
    validate_all(tiers, params)?;
    let a = association_probability(tiers, params.alpha)?;
    let models = tier_models(tiers, params, TierConfig::is_active)?;
    Ok(models
        .iter()
        .zip(&a)
        .map(|(m, &ak)| ak * sir_coverage_tier(ak, m.traffic_intensity(ak).min(1.0), m.z))
        .sum())
}

/// Normalised biases reproducing `association`, relative to tier `reference`:
/// `B_k / B_i = P_i (lambda_i A_k)^(alpha/2) / (P_k (lambda_k A_i)^(alpha/2))`.
/// Tiers with zero association get zero bias.
pub fn bias_from_association(
    association: &[f64],
    tiers: &[TierConfig],
    alpha: f64,
    reference: usize,
) -> Result<Vec<f64>> {
    if !(alpha.is_finite() && alpha > 2.0) {
        return Err(AnalyticError::InvalidAlpha(alpha));
    }
    if association.len() != tiers.len() {
        return Err(AnalyticError::LengthMismatch {
            expected: tiers.len(),
            got: association.len(),
        });
    }
    tier_index(tiers, reference)?;
    let ref_tier = &tiers[reference];
    let a_ref = association[reference];
    if !(a_ref > 0.0) || !(ref_tier.lambda > 0.0) {
        return Err(AnalyticError::InvalidReference { tier: reference });
    }
    let e = alpha / 2.0;
    Ok(tiers
        .iter()
        .zip(association)
        .map(|(t, &a)| {
            if a <= 0.0 || t.lambda <= 0.0 {
                0.0
            } else {
                ref_tier.power * (ref_tier.lambda * a).powf(e) / (t.power * (t.lambda * a_ref).powf(e))
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierReport {
    pub association_prob: f64,
    /// bits/s
    pub rate: f64,
    /// packets/s
    pub service_rate: f64,
    pub traffic_intensity: f64,
    pub sir_coverage: f64,
    pub delay_bound: Delay,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticReport {
    pub tiers: Vec<TierReport>,
    pub delay_bound: Delay,
    pub sir_coverage: f64,
    pub z: f64,
}

impl AnalyticReport {
    pub fn all_stable(&self) -> bool {
        self.tiers.iter().all(|t| t.stable)
    }
}

/// Runs the whole analytic chain for one configuration.
pub fn analyze(tiers: &[TierConfig], params: &NetworkParams) -> Result<AnalyticReport> {
    validate_all(tiers, params)?;
    let a = association_probability(tiers, params.alpha)?;
    let models = tier_models(tiers, params, TierConfig::is_active)?;
    let z = models[0].z;
    let reports: Vec<TierReport> = tiers
        .iter()
        .zip(&models)
        .zip(&a)
        .map(|((t, m), &ak)| {
            let rho = m.traffic_intensity(ak);
            let delay = m.delay(ak);
            TierReport {
                association_prob: ak,
                rate: m.rate,
                service_rate: service_rate(t, params.sir_threshold, params.mean_packet_length),
                traffic_intensity: rho,
                sir_coverage: sir_coverage_tier(ak, rho.min(1.0), z),
                delay_bound: delay,
                stable: !t.is_active() || delay.is_bounded(),
            }
        })
        .collect();
    Ok(AnalyticReport {
        delay_bound: network_delay_bound_at(&a, tiers, params)?,
        sir_coverage: network_sir_coverage(tiers, params)?,
        tiers: reports,
        z,
    })
}
