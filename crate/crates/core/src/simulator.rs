//! Discrete-event simulation of the coupled per-BS queues.
//!
//! Each BS runs a FIFS queue fed by the Poisson streams of its users. When a
//! packet reaches the head of the line the BS draws fresh Rayleigh fades for
//! itself and every busy co-tier BS and checks the SIR at the packet's owner.
//! A failed check drops the packet at no cost; a passed one occupies the BS
//! for `length / R_k` seconds.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{tier_rate, AnalyticError, NetworkParams, TierConfig};
use crate::geometry::{associate, AssociationMap, Deployment, GeometryError, Window};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("event cap of {cap} exceeded; the system is probably unstable")]
    EventOverflow { cap: u64 },
    #[error("no SIR checks were recorded")]
    NoSamples,
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub window: Window,
    /// Total simulated time in seconds, warmup included.
    pub duration: f64,
    pub warmup: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub unstable_utilization_cutoff: f64,
    /// With the gate off every packet is served, giving plain M/M/1 queues.
    pub sir_gate: bool,
    pub max_events: u64,
}

impl SimConfig {
    pub fn new(window: Window, duration: f64, warmup: f64, replications: usize, base_seed: u64) -> Self {
        Self {
            window,
            duration,
            warmup,
            replications,
            base_seed,
            unstable_utilization_cutoff: 0.98,
            sir_gate: true,
            max_events: 4_000_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup >= 0.0 && self.duration.is_finite() && self.duration > self.warmup) {
            return Err(SimError::InvalidConfig(format!(
                "need duration > warmup >= 0, got duration {} warmup {}",
                self.duration, self.warmup
            )));
        }
        if self.replications == 0 {
            return Err(SimError::InvalidConfig("replications must be at least 1".into()));
        }
        if !(self.unstable_utilization_cutoff > 0.0 && self.unstable_utilization_cutoff <= 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "utilization cutoff must be in (0, 1], got {}",
                self.unstable_utilization_cutoff
            )));
        }
        Ok(())
    }

    pub fn observed_time(&self) -> f64 {
        self.duration - self.warmup
    }
}

/// A sampled deployment with its association, ready to simulate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub tiers: Vec<TierConfig>,
    pub deployment: Deployment,
    pub association: AssociationMap,
    pub replication: usize,
    /// Seed of the traffic stream for this replication.
    pub traffic_seed: u64,
    traffic_stream: u64,
}

impl Scenario {
    /// Wraps a hand-built deployment, e.g. fixed BS and user positions.
    /// Traffic uses the same stream as [`build_scenario`] would for
    /// `replication`.
    pub fn new(
        tiers: Vec<TierConfig>,
        deployment: Deployment,
        alpha: f64,
        replication: usize,
        traffic_seed: u64,
    ) -> Result<Self> {
        tiers.iter().try_for_each(TierConfig::validate)?;
        let association = associate(&deployment, &tiers, alpha)?;
        Ok(Self {
            tiers,
            deployment,
            association,
            replication,
            traffic_seed,
            traffic_stream: 2 * replication as u64 + 1,
        })
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples the deployment for replication `replication`. The BS and user
/// fields depend only on the seed, the densities and the window, so a bias
/// sweep with a fixed seed reuses the same geometry at every point.
pub fn build_scenario(
    tiers: &[TierConfig],
    params: &NetworkParams,
    config: &SimConfig,
    replication: usize,
) -> Result<Scenario> {
    params.validate()?;
    tiers.iter().try_for_each(TierConfig::validate)?;
    config.validate()?;
    let mut rng = stream_rng(config.base_seed, 2 * replication as u64);
    let lambdas: Vec<f64> = tiers.iter().map(|t| t.lambda).collect();
    let deployment = Deployment::sample(
        &lambdas,
        params.user_intensity,
        config.window,
        config.base_seed,
        &mut rng,
    )?;
    let association = associate(&deployment, tiers, params.alpha)?;
    Ok(Scenario {
        tiers: tiers.to_vec(),
        deployment,
        association,
        replication,
        traffic_seed: config.base_seed,
        traffic_stream: 2 * replication as u64 + 1,
    })
}

/// Counters for one BS over the observation period. Packet counts cover
/// packets that arrived after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BsStats {
    pub tier: usize,
    pub users: usize,
    pub arrivals: u64,
    pub served: u64,
    pub dropped: u64,
    /// Still waiting or in service at the horizon.
    pub queued_at_end: u64,
    pub busy_time: f64,
    pub sojourn_sum: f64,
    pub sir_checks: u64,
    pub sir_passes: u64,
    /// Served packets that overtook an earlier arrival.
    pub fifo_violations: u64,
    /// Smallest `departure - arrival - service time` seen.
    pub min_causality_slack: f64,
}

impl BsStats {
    pub fn utilization(&self, observed: f64) -> f64 {
        self.busy_time / observed
    }

    pub fn mean_sojourn(&self) -> Option<f64> {
        (self.served > 0).then(|| self.sojourn_sum / self.served as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierStats {
    pub bs_count: usize,
    pub association_fraction: f64,
    /// Mean busy fraction over all BSs of the tier.
    pub utilization: f64,
    /// Mean over stable BSs of each BS's mean sojourn; NaN if there are none.
    pub mean_delay: f64,
    /// Per-BS pass fractions averaged with user-count weights.
    pub sir_pass_fraction: f64,
    pub drop_fraction: f64,
    pub unstable_bs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationStats {
    pub replication: usize,
    pub observed_time: f64,
    pub events: u64,
    pub bs: Vec<BsStats>,
    pub tiers: Vec<TierStats>,
    /// Density-weighted mean of the tier delays.
    pub network_delay: f64,
    pub network_coverage: f64,
    /// SIR checks whose interferer list disagreed with the busy flags
    /// (only counted in audit runs).
    pub busy_set_mismatches: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    /// Replications that produced a value.
    pub samples: usize,
}

impl Estimate {
    /// Mean and standard error of the finite values in `values`.
    pub fn from_samples(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        let n = v.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                samples: 0,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            samples: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierSummary {
    pub utilization: Estimate,
    pub mean_delay: Estimate,
    pub sir_coverage: Estimate,
    pub drop_fraction: Estimate,
    pub association_fraction: Estimate,
    pub unstable_bs: Estimate,
}

/// Statistics aggregated across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub replications: usize,
    pub tiers: Vec<TierSummary>,
    pub network_delay: Estimate,
    pub network_coverage: Estimate,
    /// Unstable BSs summed over replications, per tier.
    pub unstable_bs_total: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    arrival: f64,
    length: f64,
    user: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Departure = 0,
    Arrival = 1,
}

/// Time-ordered key; ties by kind then BS index. Times are non-negative so
/// their bit patterns sort like the values.
type Event = Reverse<(u64, Kind, u32)>;

fn event(time: f64, kind: Kind, bs: usize) -> Event {
    Reverse((time.to_bits(), kind, bs as u32))
}

/// The busy BSs of one tier, stored densely for the interference loop.
#[derive(Debug, Default)]
struct BusySet {
    x: Vec<f64>,
    y: Vec<f64>,
    id: Vec<u32>,
}

impl BusySet {
    fn insert(&mut self, id: usize, x: f64, y: f64, slot: &mut [u32]) {
        slot[id] = self.id.len() as u32;
        self.x.push(x);
        self.y.push(y);
        self.id.push(id as u32);
    }

    fn remove(&mut self, id: usize, slot: &mut [u32]) {
        let i = slot[id] as usize;
        let last = *self.id.last().expect("removing from an empty busy set");
        self.x.swap_remove(i);
        self.y.swap_remove(i);
        self.id.swap_remove(i);
        if last as usize != id {
            slot[last as usize] = i as u32;
        }
        slot[id] = u32::MAX;
    }
}

struct Engine<'a> {
    scenario: &'a Scenario,
    config: &'a SimConfig,
    tau: f64,
    alpha: f64,
    width: f64,
    height: f64,
    // Flattened BS arrays, tier-major.
    mean_length: f64,
    tier_of: Vec<usize>,
    bs_x: Vec<f64>,
    bs_y: Vec<f64>,
    service_rate: Vec<f64>,
    arrival_rate: Vec<f64>,
    users_of: Vec<Vec<u32>>,
    user_x: Vec<f64>,
    user_y: Vec<f64>,
    queues: Vec<VecDeque<Packet>>,
    busy: Vec<bool>,
    service_start: Vec<f64>,
    last_served_arrival: Vec<f64>,
    busy_sets: Vec<BusySet>,
    busy_slot: Vec<u32>,
    stats: Vec<BsStats>,
    mismatches: u64,
    audit: bool,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, params: &NetworkParams, config: &'a SimConfig, audit: bool) -> Self {
        let dep = &scenario.deployment;
        let mut tier_of = Vec::new();
        let mut bs_x = Vec::new();
        let mut bs_y = Vec::new();
        let mut service_rate = Vec::new();
        let mut offsets = Vec::with_capacity(dep.tiers());
        for (k, pts) in dep.bs_points.iter().enumerate() {
            offsets.push(tier_of.len());
            let rate = tier_rate(&scenario.tiers[k], params.sir_threshold);
            for p in pts {
                tier_of.push(k);
                bs_x.push(p.x);
                bs_y.push(p.y);
                service_rate.push(rate);
            }
        }
        let n = tier_of.len();
        let mut users_of = vec![Vec::new(); n];
        for (u, a) in scenario.association.assignments.iter().enumerate() {
            users_of[offsets[a.tier] + a.bs].push(u as u32);
        }
        let arrival_rate = users_of
            .iter()
            .map(|u| params.arrival_rate * u.len() as f64)
            .collect();
        let stats = (0..n)
            .map(|g| BsStats {
                tier: tier_of[g],
                users: users_of[g].len(),
                min_causality_slack: f64::INFINITY,
                ..BsStats::default()
            })
            .collect();
        Self {
            scenario,
            config,
            tau: params.sir_threshold,
            alpha: params.alpha,
            mean_length: params.mean_packet_length,
            width: dep.window.width(),
            height: dep.window.height(),
            tier_of,
            bs_x,
            bs_y,
            service_rate,
            arrival_rate,
            users_of,
            user_x: dep.user_points.iter().map(|p| p.x).collect(),
            user_y: dep.user_points.iter().map(|p| p.y).collect(),
            queues: vec![VecDeque::new(); n],
            busy: vec![false; n],
            service_start: vec![0.0; n],
            last_served_arrival: vec![f64::NEG_INFINITY; n],
            busy_sets: (0..dep.tiers()).map(|_| BusySet::default()).collect(),
            busy_slot: vec![u32::MAX; n],
            stats,
            mismatches: 0,
            audit,
        }
    }

    #[inline]
    fn path_gain(&self, d2: f64) -> f64 {
        if self.alpha == 4.0 {
            1.0 / (d2 * d2)
        } else {
            d2.powf(-0.5 * self.alpha)
        }
    }

    #[inline]
    fn dist_sq(&self, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
        let dx = (ax - bx).abs();
        let dy = (ay - by).abs();
        let dx = dx.min(self.width - dx);
        let dy = dy.min(self.height - dy);
        dx * dx + dy * dy
    }

    /// Instantaneous SIR check for BS `g` serving `user`.
    fn sir_passes(&mut self, g: usize, user: u32, rng: &mut ChaCha8Rng) -> bool {
        let ux = self.user_x[user as usize];
        let uy = self.user_y[user as usize];
        let k = self.tier_of[g];
        if self.audit {
            self.audit_busy_set(g, k);
        }
        let h0: f64 = Exp1.sample(rng);
        let signal = h0 * self.path_gain(self.dist_sq(ux, uy, self.bs_x[g], self.bs_y[g]));
        if !signal.is_finite() {
            return true;
        }
        // Pass iff signal / interference > tau; stop as soon as it cannot.
        let limit = signal / self.tau;
        let set = &self.busy_sets[k];
        let mut interference = 0.0;
        for j in 0..set.id.len() {
            let h: f64 = Exp1.sample(rng);
            interference += h * self.path_gain(self.dist_sq(ux, uy, set.x[j], set.y[j]));
            if interference >= limit {
                return false;
            }
        }
        true
    }

    fn audit_busy_set(&mut self, g: usize, k: usize) {
        let mut expected: Vec<u32> = (0..self.busy.len())
            .filter(|&j| j != g && self.busy[j] && self.tier_of[j] == k)
            .map(|j| j as u32)
            .collect();
        let mut listed = self.busy_sets[k].id.clone();
        expected.sort_unstable();
        listed.sort_unstable();
        if expected != listed {
            self.mismatches += 1;
        }
    }

    fn set_busy(&mut self, g: usize, on: bool) {
        if self.busy[g] == on {
            return;
        }
        self.busy[g] = on;
        let k = self.tier_of[g];
        if on {
            let (x, y) = (self.bs_x[g], self.bs_y[g]);
            self.busy_sets[k].insert(g, x, y, &mut self.busy_slot);
        } else {
            self.busy_sets[k].remove(g, &mut self.busy_slot);
        }
    }

    /// Serves head-of-line packets at BS `g` from time `now`, dropping those
    /// that fail the SIR check, until one is admitted or the queue empties.
    fn start_service(&mut self, g: usize, now: f64, rng: &mut ChaCha8Rng, heap: &mut BinaryHeap<Event>) {
        let warmup = self.config.warmup;
        while let Some(&p) = self.queues[g].front() {
            let pass = !self.config.sir_gate || self.sir_passes(g, p.user, rng);
            if p.arrival >= warmup {
                self.stats[g].sir_checks += 1;
                if pass {
                    self.stats[g].sir_passes += 1;
                }
            }
            if pass {
                self.service_start[g] = now;
                self.set_busy(g, true);
                heap.push(event(now + p.length / self.service_rate[g], Kind::Departure, g));
                return;
            }
            self.queues[g].pop_front();
            if p.arrival >= warmup {
                self.stats[g].dropped += 1;
            }
        }
    }

    fn observed_overlap(&self, start: f64, end: f64) -> f64 {
        (end.min(self.config.duration) - start.max(self.config.warmup)).max(0.0)
    }

    fn run(mut self) -> Result<ReplicationStats> {
        let scenario = self.scenario;
        let config = self.config;
        let mut rng = stream_rng(scenario.traffic_seed, scenario.traffic_stream);
        let mut heap: BinaryHeap<Event> = BinaryHeap::with_capacity(2 * self.busy.len() + 1);
        for g in 0..self.busy.len() {
            if self.arrival_rate[g] > 0.0 {
                let t: f64 = Exp1.sample(&mut rng);
                heap.push(event(t / self.arrival_rate[g], Kind::Arrival, g));
            }
        }
        let lengths = Exp::new(1.0 / self.mean_length).expect("positive packet length");
        let mut events = 0u64;
        while let Some(&Reverse((bits, kind, g))) = heap.peek() {
            let now = f64::from_bits(bits);
            if now > config.duration {
                break;
            }
            heap.pop();
            events += 1;
            if events > config.max_events {
                return Err(SimError::EventOverflow {
                    cap: config.max_events,
                });
            }
            let g = g as usize;
            match kind {
                Kind::Arrival => {
                    let users = &self.users_of[g];
                    let user = users[rng.random_range(0..users.len())];
                    let length = lengths.sample(&mut rng);
                    if now >= config.warmup {
                        self.stats[g].arrivals += 1;
                    }
                    self.queues[g].push_back(Packet {
                        arrival: now,
                        length,
                        user,
                    });
                    if !self.busy[g] {
                        self.start_service(g, now, &mut rng, &mut heap);
                    }
                    let gap: f64 = Exp1.sample(&mut rng);
                    heap.push(event(now + gap / self.arrival_rate[g], Kind::Arrival, g));
                }
                Kind::Departure => {
                    let p = self.queues[g].pop_front().expect("departure from an empty queue");
                    let start = self.service_start[g];
                    self.stats[g].busy_time += self.observed_overlap(start, now);
                    if p.arrival >= config.warmup {
                        let s = &mut self.stats[g];
                        s.served += 1;
                        s.sojourn_sum += now - p.arrival;
                        let slack = now - p.arrival - p.length / self.service_rate[g];
                        s.min_causality_slack = s.min_causality_slack.min(slack);
                        if p.arrival < self.last_served_arrival[g] {
                            s.fifo_violations += 1;
                        }
                    }
                    self.last_served_arrival[g] = p.arrival;
                    self.set_busy(g, false);
                    self.start_service(g, now, &mut rng, &mut heap);
                }
            }
        }
        for g in 0..self.busy.len() {
            if self.busy[g] {
                self.stats[g].busy_time += self.observed_overlap(self.service_start[g], config.duration);
            }
            self.stats[g].queued_at_end =
                self.queues[g].iter().filter(|p| p.arrival >= config.warmup).count() as u64;
        }
        Ok(self.summarise(events))
    }

    fn summarise(self, events: u64) -> ReplicationStats {
        let config = self.config;
        let scenario = self.scenario;
        let observed = config.observed_time();
        let users = scenario.association.users();
        let mut tiers = Vec::with_capacity(scenario.tiers.len());
        for k in 0..scenario.tiers.len() {
            let members: Vec<&BsStats> = self.stats.iter().filter(|s| s.tier == k).collect();
            let rate = self
                .service_rate
                .iter()
                .zip(&self.tier_of)
                .find(|(_, &t)| t == k)
                .map(|(&r, _)| r)
                .unwrap_or(0.0);
            let stable = |s: &BsStats| {
                s.utilization(observed) <= config.unstable_utilization_cutoff
                    && admitted_load(s, observed, self.mean_length, rate) < 1.0
            };
            let utilization = mean(members.iter().map(|s| s.utilization(observed)));
            let mean_delay = mean(
                members
                    .iter()
                    .filter(|s| stable(s))
                    .filter_map(|s| s.mean_sojourn()),
            );
            // Weight each BS's pass fraction by its users. Pooling checks
            // instead over-weights BSs that drop a lot, since drops are free
            // and such BSs get through more checks when backlogged.
            let (cov_num, cov_den) = members
                .iter()
                .filter(|s| s.sir_checks > 0)
                .fold((0.0, 0.0), |(n, d), s| {
                    let w = s.users as f64;
                    (n + w * s.sir_passes as f64 / s.sir_checks as f64, d + w)
                });
            let arrivals: u64 = members.iter().map(|s| s.arrivals).sum();
            let dropped: u64 = members.iter().map(|s| s.dropped).sum();
            tiers.push(TierStats {
                bs_count: members.len(),
                association_fraction: if users > 0 {
                    scenario.association.tier_user_count(k) as f64 / users as f64
                } else {
                    f64::NAN
                },
                utilization,
                mean_delay,
                sir_pass_fraction: if cov_den > 0.0 { cov_num / cov_den } else { f64::NAN },
                drop_fraction: ratio(dropped, arrivals),
                unstable_bs: members.iter().filter(|s| !stable(s)).count(),
            });
        }
        let (num, den) = scenario
            .tiers
            .iter()
            .zip(&tiers)
            .filter(|(t, s)| t.is_active() && s.mean_delay.is_finite())
            .fold((0.0, 0.0), |(n, d), (t, s)| (n + t.lambda * s.mean_delay, d + t.lambda));
        let network_delay = if den > 0.0 { num / den } else { f64::NAN };
        let (num, den) = tiers
            .iter()
            .filter(|s| s.sir_pass_fraction.is_finite())
            .fold((0.0, 0.0), |(n, d), s| {
                (n + s.association_fraction * s.sir_pass_fraction, d + s.association_fraction)
            });
        let network_coverage = if den > 0.0 { num / den } else { f64::NAN };
        ReplicationStats {
            replication: scenario.replication,
            observed_time: observed,
            events,
            bs: self.stats,
            tiers,
            network_delay,
            network_coverage,
            busy_set_mismatches: self.mismatches,
        }
    }
}

/// Work admitted per unit time relative to capacity: the arrival rate
/// thinned by the BS's own SIR pass fraction, times `L / R`. Dropped packets
/// cost nothing, so they do not count towards instability.
fn admitted_load(s: &BsStats, observed: f64, mean_length: f64, rate: f64) -> f64 {
    let pass = if s.sir_checks > 0 {
        s.sir_passes as f64 / s.sir_checks as f64
    } else {
        1.0
    };
    s.arrivals as f64 / observed * pass * mean_length / rate
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

/// Runs one replication of a built scenario.
pub fn run_replication(
    scenario: &Scenario,
    params: &NetworkParams,
    config: &SimConfig,
) -> Result<ReplicationStats> {
    params.validate()?;
    config.validate()?;
    Engine::new(scenario, params, config, false).run()
}

#[cfg(test)]
fn run_audited(scenario: &Scenario, params: &NetworkParams, config: &SimConfig) -> Result<ReplicationStats> {
    Engine::new(scenario, params, config, true).run()
}

/// Means and standard errors across replications. Values a replication could
/// not produce (a tier with no stable BS, no SIR checks) are skipped.
pub fn aggregate(replications: &[ReplicationStats]) -> SimStats {
    let k = replications.first().map_or(0, |r| r.tiers.len());
    let tiers = (0..k)
        .map(|t| {
            let field = |f: fn(&TierStats) -> f64| Estimate::from_samples(replications.iter().map(|r| f(&r.tiers[t])));
            TierSummary {
                utilization: field(|s| s.utilization),
                mean_delay: field(|s| s.mean_delay),
                sir_coverage: field(|s| s.sir_pass_fraction),
                drop_fraction: field(|s| s.drop_fraction),
                association_fraction: field(|s| s.association_fraction),
                unstable_bs: field(|s| s.unstable_bs as f64),
            }
        })
        .collect();
    SimStats {
        replications: replications.len(),
        tiers,
        network_delay: Estimate::from_samples(replications.iter().map(|r| r.network_delay)),
        network_coverage: Estimate::from_samples(replications.iter().map(|r| r.network_coverage)),
        unstable_bs_total: (0..k)
            .map(|t| replications.iter().map(|r| r.tiers[t].unstable_bs).sum())
            .collect(),
    }
}

/// Fraction of SIR checks passed, mixed over tiers by association fraction.
pub fn empirical_sir_coverage(stats: &ReplicationStats) -> Result<f64> {
    if stats.network_coverage.is_finite() {
        Ok(stats.network_coverage)
    } else {
        Err(SimError::NoSamples)
    }
}

/// Builds and runs every replication. Replications are independent and run
/// in parallel; the result order is by replication index.
pub fn simulate_replications(
    tiers: &[TierConfig],
    params: &NetworkParams,
    config: &SimConfig,
) -> Result<Vec<ReplicationStats>> {
    config.validate()?;
    (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let scenario = build_scenario(tiers, params, config, r)?;
            run_replication(&scenario, params, config)
        })
        .collect()
}

pub fn simulate(tiers: &[TierConfig], params: &NetworkParams, config: &SimConfig) -> Result<SimStats> {
    Ok(aggregate(&simulate_replications(tiers, params, config)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{compute_z, delay_bound_tier};
    use crate::units::{db_to_linear, dbm_to_watts};

    fn table(bias2_db: f64) -> Vec<TierConfig> {
        vec![
            TierConfig {
                lambda: 1e-4,
                power: dbm_to_watts(46.0),
                bandwidth: 1e7,
                bias: 1.0,
            },
            TierConfig {
                lambda: 5e-4,
                power: dbm_to_watts(35.0),
                bandwidth: 6e6,
                bias: db_to_linear(bias2_db),
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

    fn small(duration: f64, seed: u64) -> SimConfig {
        SimConfig::new(Window::new(300.0, 300.0).unwrap(), duration, 0.0, 1, seed)
    }

    #[test]
    fn config_validation() {
        let mut c = small(10.0, 1);
        c.warmup = 10.0;
        assert!(c.validate().is_err());
        let mut c = small(10.0, 1);
        c.replications = 0;
        assert!(c.validate().is_err());
        assert!(small(10.0, 1).validate().is_ok());
    }

    #[test]
    fn scenario_counts() {
        let c = SimConfig::new(Window::new(1000.0, 1000.0).unwrap(), 1.0, 0.0, 1, 42);
        let s = build_scenario(&table(0.0), &params(1.0), &c, 0).unwrap();
        let n1 = s.deployment.bs_points[0].len() as f64;
        let n2 = s.deployment.bs_points[1].len() as f64;
        let nu = s.deployment.user_points.len() as f64;
        assert!((n1 - 100.0).abs() < 5.0 * 10.0, "{n1}");
        assert!((n2 - 500.0).abs() < 5.0 * 500f64.sqrt(), "{n2}");
        assert!((nu - 1e4).abs() < 5.0 * 100.0, "{nu}");
    }

    #[test]
    fn deterministic() {
        let c = small(20.0, 9);
        let a = build_scenario(&table(0.0), &params(1.5), &c, 3).unwrap();
        let b = build_scenario(&table(0.0), &params(1.5), &c, 3).unwrap();
        assert_eq!(a.deployment, b.deployment);
        assert_eq!(a.association, b.association);
        let ra = run_replication(&a, &params(1.5), &c).unwrap();
        let rb = run_replication(&b, &params(1.5), &c).unwrap();
        assert_eq!(ra, rb);
        let other = build_scenario(&table(0.0), &params(1.5), &c, 4).unwrap();
        assert_ne!(a.deployment, other.deployment);
    }

    #[test]
    fn bias_sweep_shares_geometry() {
        let c = small(1.0, 5);
        let a = build_scenario(&table(-10.0), &params(1.0), &c, 0).unwrap();
        let b = build_scenario(&table(10.0), &params(1.0), &c, 0).unwrap();
        assert_eq!(a.deployment, b.deployment);
    }

    #[test]
    fn zero_load_is_idle() {
        let c = small(50.0, 2);
        let s = build_scenario(&table(0.0), &params(0.0), &c, 0).unwrap();
        let r = run_replication(&s, &params(0.0), &c).unwrap();
        assert_eq!(r.events, 0);
        assert!(r.tiers.iter().all(|t| t.utilization == 0.0));
        assert_eq!(empirical_sir_coverage(&r), Err(SimError::NoSamples));
    }

    #[test]
    fn conservation_causality_and_fifo() {
        let mut c = small(60.0, 3);
        c.warmup = 10.0;
        let p = params(1.5);
        let s = build_scenario(&table(0.0), &p, &c, 0).unwrap();
        let r = run_audited(&s, &p, &c).unwrap();
        assert_eq!(r.busy_set_mismatches, 0);
        let mut total = (0, 0);
        for b in &r.bs {
            assert_eq!(b.arrivals, b.served + b.dropped + b.queued_at_end);
            assert_eq!(b.fifo_violations, 0);
            assert!(b.min_causality_slack >= -1e-9);
            assert!(b.busy_time <= r.observed_time * (1.0 + 1e-12));
            assert!(b.sir_passes <= b.sir_checks);
            total.0 += b.arrivals;
            total.1 += b.served + b.dropped + b.queued_at_end;
        }
        assert_eq!(total.0, total.1);
        assert!(total.0 > 10_000);
        for t in &r.tiers {
            for v in [t.utilization, t.sir_pass_fraction, t.drop_fraction, t.association_fraction] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn sojourn_at_least_service_time() {
        let c = small(60.0, 11);
        let p = params(1.0);
        let s = build_scenario(&table(0.0), &p, &c, 0).unwrap();
        let r = run_replication(&s, &p, &c).unwrap();
        for (k, t) in r.tiers.iter().enumerate() {
            if t.mean_delay.is_finite() {
                let r_k = tier_rate(&table(0.0)[k], 1.0);
                // every sojourn is at least its own transmission, so the mean
                // exceeds a loose fraction of the mean transmission time
                assert!(t.mean_delay > 0.1 * 1e5 / r_k);
            }
        }
    }

    #[test]
    fn interference_free_coverage_is_one() {
        use crate::geometry::Point;
        let tiers = vec![TierConfig {
            lambda: 1e-6,
            power: 1.0,
            bandwidth: 1e7,
            bias: 1.0,
        }];
        let window = Window::new(1000.0, 1000.0).unwrap();
        let c = SimConfig::new(window, 20.0, 0.0, 1, 1);
        let deployment = Deployment {
            bs_points: vec![vec![Point::new(500.0, 500.0)]],
            user_points: (0..50).map(|i| Point::new(10.0 * i as f64, 300.0)).collect(),
            window,
            seed: 1,
        };
        let s = Scenario::new(tiers, deployment, 4.0, 0, 1).unwrap();
        let r = run_replication(&s, &params(1.0), &c).unwrap();
        assert!(r.bs[0].sir_checks > 100);
        assert_eq!(empirical_sir_coverage(&r).unwrap(), 1.0);
    }

    #[test]
    fn full_buffer_coverage() {
        // Saturated single tier: every other BS always interferes.
        let tiers = vec![TierConfig {
            lambda: 1e-4,
            power: 1.0,
            bandwidth: 1e7,
            bias: 1.0,
        }];
        let p = NetworkParams {
            arrival_rate: 20.0,
            ..params(0.0)
        };
        let c = SimConfig::new(Window::new(1000.0, 1000.0).unwrap(), 3.0, 0.5, 4, 17);
        let stats = simulate(&tiers, &p, &c).unwrap();
        let z = compute_z(1.0, 4.0).unwrap();
        let cov = stats.network_coverage.mean;
        assert!((cov - 1.0 / (z + 1.0)).abs() < 0.02, "{cov}");
    }

    #[test]
    fn mm1_without_gate() {
        let tiers = vec![TierConfig {
            lambda: 1e-5,
            power: 1.0,
            bandwidth: 1e7,
            bias: 1.0,
        }];
        // Each BS sees gamma * N users; pick gamma so a 100-user BS has rho = 1/2.
        let p = NetworkParams {
            user_intensity: 1e-3,
            arrival_rate: 0.5,
            ..params(0.0)
        };
        let mut c = SimConfig::new(Window::new(1000.0, 1000.0).unwrap(), 2000.0, 100.0, 1, 23);
        c.sir_gate = false;
        let s = build_scenario(&tiers, &p, &c, 0).unwrap();
        let r = run_replication(&s, &p, &c).unwrap();
        let service = 1e5 / 1e7;
        let (mut num, mut den) = (0.0, 0.0);
        for b in r.bs.iter().filter(|b| b.served > 0) {
            let rho = 0.5 * b.users as f64 * service;
            if rho < 0.8 {
                let expect = delay_bound_tier(rho, 1e7, 1e5).seconds();
                num += b.sojourn_sum;
                den += expect * b.served as f64;
            }
        }
        assert!(den > 0.0);
        assert!((num / den - 1.0).abs() < 0.05, "{}", num / den);
        assert!(r.bs.iter().all(|b| b.sir_passes == b.sir_checks));
    }

    #[test]
    fn aggregate_passthrough_and_identical() {
        let c = small(20.0, 4);
        let p = params(1.0);
        let s = build_scenario(&table(0.0), &p, &c, 0).unwrap();
        let r = run_replication(&s, &p, &c).unwrap();
        let one = aggregate(std::slice::from_ref(&r));
        assert_eq!(one.tiers[0].utilization.mean, r.tiers[0].utilization);
        assert_eq!(one.tiers[0].utilization.std_error, 0.0);
        let two = aggregate(&[r.clone(), r.clone()]);
        assert_eq!(two.network_delay.std_error, 0.0);
        assert_eq!(two.network_delay.mean, r.network_delay);
    }

    #[test]
    fn event_cap() {
        let mut c = small(20.0, 4);
        c.max_events = 10;
        let p = params(1.0);
        let s = build_scenario(&table(0.0), &p, &c, 0).unwrap();
        assert_eq!(run_replication(&s, &p, &c), Err(SimError::EventOverflow { cap: 10 }));
    }

    #[test]
    fn busy_set_swap_remove() {
        let mut set = BusySet::default();
        let mut slot = vec![u32::MAX; 5];
        for id in [3, 1, 4, 0] {
            set.insert(id, id as f64, 0.0, &mut slot);
        }
        set.remove(1, &mut slot);
        set.remove(0, &mut slot);
        let mut ids = set.id.clone();
        ids.sort_unstable();
        assert_eq!(ids, vec![3, 4]);
        for (i, &id) in set.id.iter().enumerate() {
            assert_eq!(slot[id as usize] as usize, i);
            assert_eq!(set.x[i], id as f64);
        }
        assert_eq!(slot[1], u32::MAX);
    }
}
