//! Point processes on a torus window and the biased max-power association
//! rule.
//!
//! The window is a finite stand-in for the infinite plane: every distance is
//! measured with toroidal wraparound so BSs near an edge see the same
//! interference field as BSs in the middle.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::analytic::TierConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("window dimensions must be finite and positive, got {width} x {height}")]
    InvalidWindow { width: f64, height: f64 },
    #[error("point intensity must be finite and non-negative, got {0}")]
    InvalidIntensity(f64),
    #[error("no BS available for association: every tier is empty or excluded")]
    NoBsAvailable,
    #[error("association map has no users")]
    EmptyMap,
    #[error("tier index {tier} out of range ({tiers} tiers)")]
    TierOutOfRange { tier: usize, tiers: usize },
    #[error("deployment has {deployment} tiers but {config} tier configs were given")]
    TierCountMismatch { deployment: usize, config: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    width: f64,
    height: f64,
}

impl Window {
    pub fn new(width: f64, height: f64) -> Result<Self, GeometryError> {
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(GeometryError::InvalidWindow { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..self.width).contains(&p.x) && (0.0..self.height).contains(&p.y)
    }

    /// Squared toroidal distance. Hot path of the simulator, so no sqrt.
    #[inline]
    pub fn distance_sq(&self, a: Point, b: Point) -> f64 {
        let dx = wrap(a.x - b.x, self.width);
        let dy = wrap(a.y - b.y, self.height);
        dx * dx + dy * dy
    }

    pub fn distance(&self, a: Point, b: Point) -> f64 {
        self.distance_sq(a, b).sqrt()
    }
}

/// Shortest per-axis separation on a circle of circumference `extent`.
#[inline]
pub(crate) fn wrap(delta: f64, extent: f64) -> f64 {
    let d = delta.abs();
    d.min(extent - d)
}

pub fn toroidal_distance(a: Point, b: Point, window: &Window) -> f64 {
    window.distance(a, b)
}

/// Homogeneous PPP on the window: Poisson(intensity * area) points placed
/// i.i.d. uniformly.
pub fn sample_ppp<R: Rng + ?Sized>(
    intensity: f64,
    window: &Window,
    rng: &mut R,
) -> Result<Vec<Point>, GeometryError> {
    if !(intensity.is_finite() && intensity >= 0.0) {
        return Err(GeometryError::InvalidIntensity(intensity));
    }
    let mean = intensity * window.area();
    if mean == 0.0 {
        return Ok(Vec::new());
    }
    let n = Poisson::new(mean)
        .map_err(|_| GeometryError::InvalidIntensity(intensity))?
        .sample(rng) as usize;
    Ok((0..n)
        .map(|_| {
            Point::new(
                rng.random::<f64>() * window.width,
                rng.random::<f64>() * window.height,
            )
        })
        .collect())
}

/// One realisation of the BS tiers and the user field.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub bs_points: Vec<Vec<Point>>,
    pub user_points: Vec<Point>,
    pub window: Window,
    pub seed: u64,
}

impl Deployment {
    /// Samples each tier, then the users, from a single stream.
    pub fn sample<R: Rng + ?Sized>(
        tier_intensities: &[f64],
        user_intensity: f64,
        window: Window,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self, GeometryError> {
        let bs_points = tier_intensities
            .iter()
            .map(|&lambda| sample_ppp(lambda, &window, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let user_points = sample_ppp(user_intensity, &window, rng)?;
        Ok(Self {
            bs_points,
            user_points,
            window,
            seed,
        })
    }

    pub fn tiers(&self) -> usize {
        self.bs_points.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub tier: usize,
    pub bs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationMap {
    /// Indexed by user.
    pub assignments: Vec<Assignment>,
    /// `per_bs_user_counts[tier][bs]`.
    pub per_bs_user_counts: Vec<Vec<usize>>,
}

impl AssociationMap {
    pub fn users(&self) -> usize {
        self.assignments.len()
    }

    pub fn tier_user_count(&self, tier: usize) -> usize {
        self.per_bs_user_counts
            .get(tier)
            .map_or(0, |counts| counts.iter().sum())
    }
}

/// Nearest point of `points` to `p`, returning `(index, squared distance)`.
/// Lowest index wins on ties.
fn nearest(points: &[Point], p: Point, window: &Window) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &q) in points.iter().enumerate() {
        let d2 = window.distance_sq(p, q);
        if best.is_none_or(|(_, b)| d2 < b) {
            best = Some((i, d2));
        }
    }
    best
}

/// Assigns every user to the BS maximising `P_k B_k x^-alpha`, where `x` is
/// the distance to the nearest BS of tier `k`. Tiers with zero bias or no BS
/// are never chosen. Ties go to the lowest tier index, then the lowest BS
/// index.
pub fn associate(
    deployment: &Deployment,
    tiers: &[TierConfig],
    alpha: f64,
) -> Result<AssociationMap, GeometryError> {
    if deployment.tiers() != tiers.len() {
        return Err(GeometryError::TierCountMismatch {
            deployment: deployment.tiers(),
            config: tiers.len(),
        });
    }
    // Compare in the log domain: ln(P B) - (alpha/2) ln(d^2). A user sitting
    // exactly on a BS gets +inf and wins outright.
    let log_gain: Vec<Option<f64>> = tiers
        .iter()
        .zip(&deployment.bs_points)
        .map(|(t, pts)| {
            (t.bias > 0.0 && t.power > 0.0 && !pts.is_empty()).then(|| (t.power * t.bias).ln())
        })
        .collect();
    if log_gain.iter().all(Option::is_none) {
        return Err(GeometryError::NoBsAvailable);
    }

    let window = &deployment.window;
    let mut per_bs_user_counts: Vec<Vec<usize>> = deployment
        .bs_points
        .iter()
        .map(|pts| vec![0; pts.len()])
        .collect();
    let mut assignments = Vec::with_capacity(deployment.user_points.len());
    for &user in &deployment.user_points {
        let mut best: Option<(Assignment, f64)> = None;
        for (tier, gain) in log_gain.iter().enumerate() {
            let Some(gain) = gain else { continue };
            let Some((bs, d2)) = nearest(&deployment.bs_points[tier], user, window) else {
                continue;
            };
            let score = gain - 0.5 * alpha * d2.ln();
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((Assignment { tier, bs }, score));
            }
        }
        let (a, _) = best.ok_or(GeometryError::NoBsAvailable)?;
        per_bs_user_counts[a.tier][a.bs] += 1;
        assignments.push(a);
    }
    Ok(AssociationMap {
        assignments,
        per_bs_user_counts,
    })
}

/// Fraction of users served by `tier`.
pub fn empirical_association_fraction(
    map: &AssociationMap,
    tier: usize,
) -> Result<f64, GeometryError> {
    if map.users() == 0 {
        return Err(GeometryError::EmptyMap);
    }
    let tiers = map.per_bs_user_counts.len();
    if tier >= tiers {
        return Err(GeometryError::TierOutOfRange { tier, tiers });
    }
    Ok(map.tier_user_count(tier) as f64 / map.users() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tier(lambda: f64, power: f64, bias: f64) -> TierConfig {
        TierConfig {
            lambda,
            power,
            bandwidth: 1e7,
            bias,
        }
    }

    #[test]
    fn window_rejects_bad_sizes() {
        assert!(Window::new(0.0, 1.0).is_err());
        assert!(Window::new(1.0, -1.0).is_err());
        assert!(Window::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn toroidal_distance_examples() {
        let w = Window::new(2000.0, 2000.0).unwrap();
        let a = Point::new(0.0, 0.0);
        assert_eq!(toroidal_distance(a, a, &w), 0.0);
        assert_relative_eq!(toroidal_distance(a, Point::new(1900.0, 0.0), &w), 100.0);
        assert_relative_eq!(
            toroidal_distance(a, Point::new(500.0, 500.0), &w),
            707.1067811865476,
            max_relative = 1e-14
        );
    }

    #[test]
    fn zero_intensity_is_empty() {
        let w = Window::new(2000.0, 2000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_ppp(0.0, &w, &mut rng).unwrap().is_empty());
        assert!(sample_ppp(-1.0, &w, &mut rng).is_err());
    }

    #[test]
    fn ppp_count_mean_and_variance() {
        // Poisson law: mean = variance = lambda * area = 400.
        let w = Window::new(2000.0, 2000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 2000;
        let counts: Vec<f64> = (0..n)
            .map(|_| sample_ppp(1e-4, &w, &mut rng).unwrap().len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // sd(mean) = sqrt(400/2000) ~ 0.45; sd(var) ~ 400*sqrt(2/n) ~ 12.7
        assert!((mean - 400.0).abs() < 2.0, "mean {mean}");
        assert!((var - 400.0).abs() < 50.0, "var {var}");
    }

    #[test]
    fn ppp_dense_mean_within_three_sigma() {
        let w = Window::new(1000.0, 1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 100;
        let total: usize = (0..reps)
            .map(|_| {
                let pts = sample_ppp(1e-2, &w, &mut rng).unwrap();
                assert!(pts.iter().all(|&p| w.contains(p)));
                pts.len()
            })
            .sum();
        let mean = total as f64 / reps as f64;
        let sigma = (10_000.0f64 / reps as f64).sqrt();
        assert!((mean - 10_000.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn single_bs_takes_everyone() {
        let w = Window::new(100.0, 100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dep = Deployment {
            bs_points: vec![vec![Point::new(50.0, 50.0)]],
            user_points: sample_ppp(0.05, &w, &mut rng).unwrap(),
            window: w,
            seed: 3,
        };
        let map = associate(&dep, &[tier(1.0, 1.0, 1.0)], 4.0).unwrap();
        assert!(map.assignments.iter().all(|a| *a == Assignment { tier: 0, bs: 0 }));
        assert_eq!(map.per_bs_user_counts[0][0], dep.user_points.len());
        assert_eq!(empirical_association_fraction(&map, 0).unwrap(), 1.0);
    }

    #[test]
    fn no_bs_is_an_error() {
        let w = Window::new(100.0, 100.0).unwrap();
        let dep = Deployment {
            bs_points: vec![vec![], vec![Point::new(1.0, 1.0)]],
            user_points: vec![Point::new(2.0, 2.0)],
            window: w,
            seed: 0,
        };
        // Second tier excluded via zero bias, first tier empty.
        let tiers = [tier(1e-4, 1.0, 1.0), tier(1e-4, 1.0, 0.0)];
        assert_eq!(associate(&dep, &tiers, 4.0), Err(GeometryError::NoBsAvailable));
    }

    #[test]
    fn empty_map_fraction_errors() {
        let map = AssociationMap {
            assignments: vec![],
            per_bs_user_counts: vec![vec![0]],
        };
        assert_eq!(empirical_association_fraction(&map, 0), Err(GeometryError::EmptyMap));
    }

    #[test]
    fn ties_go_to_lowest_tier_and_index() {
        let w = Window::new(100.0, 100.0).unwrap();
        let dep = Deployment {
            bs_points: vec![
                vec![Point::new(10.0, 0.0), Point::new(0.0, 10.0)],
                vec![Point::new(10.0, 0.0)],
            ],
            user_points: vec![Point::new(0.0, 0.0)],
            window: w,
            seed: 0,
        };
        let tiers = [tier(1.0, 2.0, 1.0), tier(1.0, 1.0, 2.0)];
        let map = associate(&dep, &tiers, 4.0).unwrap();
        assert_eq!(map.assignments[0], Assignment { tier: 0, bs: 0 });
    }

    #[test]
    fn symmetric_tiers_split_evenly() {
        let w = Window::new(1000.0, 1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tiers = [tier(1e-4, 1.0, 1.0), tier(1e-4, 1.0, 1.0)];
        let mut on_first = 0usize;
        let mut users = 0usize;
        for _ in 0..20 {
            let dep = Deployment::sample(&[1e-4, 1e-4], 1e-3, w, 0, &mut rng).unwrap();
            let map = associate(&dep, &tiers, 4.0).unwrap();
            on_first += map.tier_user_count(0);
            users += map.users();
        }
        let frac = on_first as f64 / users as f64;
        // Users cluster around BSs, so the per-run fraction varies far more than
        // a binomial; 20 runs of ~100 BSs each still land close to 1/2.
        assert!((frac - 0.5).abs() < 0.05, "fraction {frac}");
    }

    fn arb_deployment() -> impl Strategy<Value = (Deployment, Vec<TierConfig>)> {
        (any::<u64>(), 1usize..4).prop_map(|(seed, k)| {
            let w = Window::new(500.0, 400.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lambdas: Vec<f64> = (0..k).map(|i| 5e-5 * (i + 1) as f64).collect();
            let mut dep = Deployment::sample(&lambdas, 1e-3, w, seed, &mut rng).unwrap();
            // Guarantee at least one BS in the first tier.
            dep.bs_points[0].push(Point::new(250.0, 200.0));
            let tiers = (0..k)
                .map(|i| tier(lambdas[i], 10f64.powi(i as i32), 0.5 + rng.random::<f64>()))
                .collect();
            (dep, tiers)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fractions_partition_users((dep, tiers) in arb_deployment()) {
            let map = associate(&dep, &tiers, 4.0).unwrap();
            prop_assume!(map.users() > 0);
            let total: f64 = (0..tiers.len())
                .map(|k| empirical_association_fraction(&map, k).unwrap())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let counted: usize = map.per_bs_user_counts.iter().flatten().sum();
            prop_assert_eq!(counted, map.users());
        }

        #[test]
        fn raising_bias_never_loses_users(
            (dep, tiers) in arb_deployment(),
            boost in 1.0f64..100.0,
            which in 0usize..3,
        ) {
            let k = which % tiers.len();
            let before = associate(&dep, &tiers, 4.0).unwrap();
            let mut raised = tiers.clone();
            raised[k].bias *= boost;
            let after = associate(&dep, &raised, 4.0).unwrap();
            prop_assert!(after.tier_user_count(k) >= before.tier_user_count(k));
        }

        #[test]
        fn common_bias_scale_is_invisible(
            (dep, tiers) in arb_deployment(),
            scale in 0.01f64..100.0,
        ) {
            let before = associate(&dep, &tiers, 4.0).unwrap();
            let scaled: Vec<_> = tiers
                .iter()
                .map(|t| TierConfig { bias: t.bias * scale, ..*t })
                .collect();
            let after = associate(&dep, &scaled, 4.0).unwrap();
            // ln(c P B) shifts every score equally; only rounding could differ.
            let changed = before
                .assignments
                .iter()
                .zip(&after.assignments)
                .filter(|(a, b)| a != b)
                .count();
            prop_assert!(changed == 0, "{changed} users moved");
        }
    }
}
