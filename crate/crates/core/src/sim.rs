//! Swarm motion simulation: correlated random walk with collision avoidance,
//! noisy signal/velocity measurements, and per-robot filtering.

use nalgebra::{DVector, Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::domain::{DomainSpec, Severity, Vec2};
use crate::ekf::{
    process_noise_matrix, transition_matrix, DataTuple, Ekf, RssiVelocityModel,
};
use crate::error::{Error, Result};

/// Simulation parameters.  Lengths in meters, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Number of robots N.
    pub robots: usize,
    /// Deployment time T (s).
    pub duration: f64,
    /// Step length (s).
    pub dt: f64,
    /// Interval between recorded estimates (s); must be a multiple of `dt`.
    pub record_interval: f64,
    /// Commanded speed v (m/s).
    pub speed: f64,
    /// Per-step probability of resampling the heading.
    pub heading_resample_prob: f64,
    /// Robot sensing radius (m); moves ending nearer than this to another
    /// robot are rejected.
    pub sensing_radius: f64,
    /// Process-noise rate: each state receives variance `process_noise * dt`
    /// per step.
    pub process_noise: f64,
    /// Injected signal measurement noise, standard deviation (signal units).
    pub signal_noise: f64,
    /// Injected velocity measurement noise, standard deviation (m/s).
    pub velocity_noise: f64,
    /// Signal noise the filter assumes; defaults to `signal_noise`.  Lets a
    /// noise sweep inject more noise than the filter was told about.
    pub filter_signal_noise: Option<f64>,
    /// Initial filter covariance, `p0 * I`.
    pub init_cov: f64,
    /// Depth of the strip along the minimum-y edge where robots start (m).
    pub start_strip_depth: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            robots: 50,
            duration: 300.0,
            dt: 0.1,
            record_interval: 1.0,
            speed: 0.2,
            heading_resample_prob: 0.2,
            sensing_radius: 0.06,
            process_noise: 0.1,
            signal_noise: 0.02,
            velocity_noise: 0.02,
            filter_signal_noise: None,
            init_cov: 1e-6,
            start_strip_depth: 0.1,
        }
    }
}

impl SimConfig {
    /// Number of simulation steps.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Steps between recorded estimates.
    pub fn record_every(&self) -> Result<usize> {
        let k = (self.record_interval / self.dt).round();
        if k < 1.0 || (k * self.dt - self.record_interval).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "record interval {} must be a positive multiple of dt {}",
                self.record_interval, self.dt
            )));
        }
        Ok(k as usize)
    }

    /// Reject settings that cannot drive a simulation.
    pub fn validate(&self) -> Result<()> {
        if self.robots == 0 {
            return Err(Error::Config("at least one robot is required".into()));
        }
        for (name, v) in [
            ("duration", self.duration),
            ("dt", self.dt),
            ("speed", self.speed),
            ("sensing_radius", self.sensing_radius),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.heading_resample_prob) {
            return Err(Error::Config("heading resample probability must be in [0, 1]".into()));
        }
        if self.process_noise < 0.0 || self.signal_noise < 0.0 || self.velocity_noise < 0.0 {
            return Err(Error::Config("noise magnitudes must be non-negative".into()));
        }
        self.record_every()?;
        Ok(())
    }
}

/// True kinematic state of one robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub pos: Point2<f64>,
    pub vel: Vec2,
}

/// One noisy observation: transmitter signals followed by velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub signals: Vec<f64>,
    pub velocity: Vec2,
}

impl Measurement {
    /// Stacked vector form `[S_1..S_l, vx, vy]`.
    pub fn stacked(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.signals.len() + 2);
        for (i, s) in self.signals.iter().enumerate() {
            z[i] = *s;
        }
        z[self.signals.len()] = self.velocity.x;
        z[self.signals.len() + 1] = self.velocity.y;
        z
    }
}

/// Uniform-bucket spatial index over robot positions, rebuilt each step.
/// Bucket width equals the query radius so a 3x3 neighborhood suffices.
pub struct SpatialHash {
    cell: f64,
    buckets: std::collections::HashMap<(i64, i64), Vec<(usize, Point2<f64>)>>,
}

impl SpatialHash {
    pub fn build(positions: &[Point2<f64>], cell: f64) -> Self {
        let mut buckets: std::collections::HashMap<(i64, i64), Vec<(usize, Point2<f64>)>> =
            std::collections::HashMap::new();
        for (i, p) in positions.iter().enumerate() {
            let key = ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
            buckets.entry(key).or_default().push((i, *p));
        }
        SpatialHash { cell, buckets }
    }

    /// Is any robot other than `skip` strictly within `radius` of `p`?
    pub fn any_within(&self, p: &Point2<f64>, radius: f64, skip: usize) -> bool {
        let kx = (p.x / self.cell).floor() as i64;
        let ky = (p.y / self.cell).floor() as i64;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(v) = self.buckets.get(&(kx + dx, ky + dy)) {
                    for (i, q) in v {
                        if *i != skip && (p - q).norm() < radius {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Upper bound on collision-avoidance resamples before a robot holds still.
pub const MAX_MOVE_ATTEMPTS: usize = 100;

fn sample_heading_velocity<R: Rng>(rng: &mut R, speed: f64) -> Vec2 {
    let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    Vector2::new(speed * theta.cos(), speed * theta.sin())
}

/// Advance one robot by one step of the correlated random walk.
///
/// Draw order per step (fixed; replays depend on it): one uniform for the
/// heading-resample gate, a heading angle when the gate fires, then per move
/// attempt four process-noise normals, with a fresh heading angle after every
/// rejected attempt.  A move is rejected when the new position would leave the
/// workspace, enter an obstacle, or come within the sensing radius of another
/// robot's snapshot position.  After `MAX_MOVE_ATTEMPTS` rejections the robot
/// keeps its position for this step.
pub fn step<R: Rng>(
    state: &RobotState,
    cfg: &SimConfig,
    domain: &DomainSpec,
    neighbors: &SpatialHash,
    self_index: usize,
    rng: &mut R,
) -> RobotState {
    let mut vel = state.vel;
    if rng.gen_range(0.0..1.0) <= cfg.heading_resample_prob {
        vel = sample_heading_velocity(rng, cfg.speed);
    }
    let noise_std = (cfg.process_noise * cfg.dt).sqrt();
    for _ in 0..MAX_MOVE_ATTEMPTS {
        let mut w = [0.0f64; 4];
        for v in w.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v = n * noise_std;
        }
        let pos = Point2::new(
            state.pos.x + cfg.dt * vel.x + w[0],
            state.pos.y + cfg.dt * vel.y + w[1],
        );
        let free = domain.bounds.contains(&pos) && domain.is_free(&pos).unwrap_or(false);
        if free && !neighbors.any_within(&pos, cfg.sensing_radius, self_index) {
            return RobotState { pos, vel: vel + Vector2::new(w[2], w[3]) };
        }
        vel = sample_heading_velocity(rng, cfg.speed);
    }
    RobotState { pos: state.pos, vel }
}

/// Noisy observation of a robot's true state.
pub fn measure<R: Rng>(
    state: &RobotState,
    domain: &DomainSpec,
    cfg: &SimConfig,
    rng: &mut R,
) -> Measurement {
    let signals = domain
        .transmitters
        .iter()
        .map(|tx| {
            let n: f64 = StandardNormal.sample(rng);
            tx.signal_at(&state.pos) + n * cfg.signal_noise
        })
        .collect();
    let nx: f64 = StandardNormal.sample(rng);
    let ny: f64 = StandardNormal.sample(rng);
    Measurement {
        signals,
        velocity: state.vel + Vector2::new(nx * cfg.velocity_noise, ny * cfg.velocity_noise),
    }
}

/// Recorded truth/estimate pair at a record tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub t: f64,
    pub robot: usize,
    pub true_pos: Point2<f64>,
    pub est_pos: Point2<f64>,
}

/// Everything a deployment produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Recorded estimates, grouped by robot in robot-id order.
    pub tuples: Vec<DataTuple>,
    /// Truth/estimate pairs at every record tick, same order as `tuples`.
    pub records: Vec<TrackRecord>,
    /// True positions of every robot at every step (step-major is robot-major:
    /// `paths[j][k]` is robot j after step k+1).
    pub paths: Vec<Vec<Point2<f64>>>,
    /// Number of filter updates that failed and were skipped.
    pub filter_faults: usize,
    /// Number of measurements discarded by the innovation validation gate.
    pub gated_updates: usize,
}

fn place_robot<R: Rng>(domain: &DomainSpec, cfg: &SimConfig, rng: &mut R) -> Result<RobotState> {
    let b = &domain.bounds;
    let depth = cfg.start_strip_depth.min(b.height());
    for _ in 0..1000 {
        let pos = Point2::new(
            rng.gen_range(b.xmin..b.xmax),
            rng.gen_range(b.ymin..b.ymin + depth),
        );
        if domain.is_free(&pos)? {
            let vel = sample_heading_velocity(rng, cfg.speed);
            return Ok(RobotState { pos, vel });
        }
    }
    Err(Error::Geometry(
        "could not place a robot in the start strip; is it blocked by obstacles?".into(),
    ))
}

/// Run a full deployment: N robots for T seconds, recording one estimate per
/// robot every `record_interval`.
///
/// Robot j draws from stream j of a generator keyed on the master seed, so
/// results do not depend on scheduling and no two (seed, robot) pairs share a
/// stream.  Exactly `floor(T / record_interval)` tuples are recorded per
/// robot.
pub fn run_swarm(domain: &DomainSpec, cfg: &SimConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let issues = domain.validate_geometry(cfg.sensing_radius);
    if let Some(e) = issues.iter().find(|i| i.severity == Severity::Error) {
        return Err(Error::Geometry(e.message.clone()));
    }

    let n = cfg.robots;
    let steps = cfg.steps();
    let rec_every = cfg.record_every()?;
    let l = domain.transmitters.len();
    let signal_model = SignalModel { transmitters: domain.transmitters.clone() };
    let velocity_model = VelocityModel;
    let a = transition_matrix(cfg.dt);
    let q = process_noise_matrix(cfg.process_noise, cfg.dt);
    let filter_rs = cfg.filter_signal_noise.unwrap_or(cfg.signal_noise);
    let signal_r = DVector::from_element(l, filter_rs * filter_rs);
    let velocity_r = DVector::from_element(2, cfg.velocity_noise * cfg.velocity_noise);
    // Validation gate on the signal block: 99.9% chi-square quantile for its
    // dimension.  A signal innovation beyond the gate is discarded, so one bad
    // linearization near a transmitter cannot eject the filter from the
    // workspace.  The linear velocity rows are never gated; they keep the
    // velocity estimate honest, which bounds drift while signals are rejected
    // and guarantees the gate re-accepts within a few steps.
    let gate = ChiSquared::new(l as f64)
        .map_err(|e| Error::Config(format!("signal gate: {e}")))?
        .inverse_cdf(0.999);

    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|j| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(j as u64);
            r
        })
        .collect();
    let mut states = Vec::with_capacity(n);
    let mut filters = Vec::with_capacity(n);
    for j in 0..n {
        let s = place_robot(domain, cfg, &mut rngs[j])?;
        filters.push(Ekf::new(s.pos, s.vel, cfg.init_cov));
        states.push(s);
    }

    let mut tuples: Vec<Vec<DataTuple>> = vec![Vec::new(); n];
    let mut records: Vec<Vec<TrackRecord>> = vec![Vec::new(); n];
    let mut paths: Vec<Vec<Point2<f64>>> = vec![Vec::with_capacity(steps); n];
    let mut filter_faults = 0usize;
    let mut gated_updates = 0usize;

    for k in 1..=steps {
        let t = k as f64 * cfg.dt;
        let snapshot: Vec<Point2<f64>> = states.iter().map(|s| s.pos).collect();
        let hash = SpatialHash::build(&snapshot, cfg.sensing_radius);
        for j in 0..n {
            let rng = &mut rngs[j];
            let next = step(&states[j], cfg, domain, &hash, j, rng);
            states[j] = next;
            paths[j].push(next.pos);
            let z = measure(&next, domain, cfg, rng);
            filters[j].predict(&a, &q);
            match filters[j].update_gated(&z.stacked(), &model, &r_diag, gate) {
                Ok(true) => {}
                Ok(false) => gated_updates += 1,
                Err(_) => filter_faults += 1,
            }
            if k % rec_every == 0 {
                tuples[j].push(filters[j].record(j, t));
                records[j].push(TrackRecord {
                    t,
                    robot: j,
                    true_pos: next.pos,
                    est_pos: Point2::new(filters[j].mean[0], filters[j].mean[1]),
                });
            }
        }
    }

    Ok(RunOutput {
        tuples: tuples.into_iter().flatten().collect(),
        records: records.into_iter().flatten().collect(),
        paths,
        filter_faults,
        gated_updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GridSpec, Polygon, Rect, Transmitter};

    fn test_domain() -> DomainSpec {
        let bounds = Rect::new(0.0, 0.0, 2.0, 2.0);
        DomainSpec {
            bounds,
            obstacles: vec![Polygon::rectangle(0.8, 0.8, 1.2, 1.2)],
            transmitters: vec![
                Transmitter { pos: Point2::new(0.2, -0.4), k: 1.0, pow: 10.0, alpha: 2.0 },
                Transmitter { pos: Point2::new(1.8, -0.4), k: 1.0, pow: 10.0, alpha: 2.0 },
            ],
            grid: GridSpec::tile(&bounds, 50, 50).unwrap(),
        }
    }

    fn small_cfg() -> SimConfig {
        SimConfig { robots: 8, duration: 20.0, ..SimConfig::default() }
    }

    #[test]
    fn record_count_is_floor_of_duration_over_interval() {
        let d = test_domain();
        let cfg = SimConfig { robots: 3, duration: 5.5, ..SimConfig::default() };
        let out = run_swarm(&d, &cfg, 42).unwrap();
        // floor(5.5 / 1.0) = 5 per robot.
        assert_eq!(out.tuples.len(), 3 * 5);
        let cfg1 = SimConfig { robots: 1, duration: 0.1, record_interval: 0.1, ..cfg };
        let out1 = run_swarm(&d, &cfg1, 42).unwrap();
        assert_eq!(out1.tuples.len(), 1);
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let d = test_domain();
        let a = run_swarm(&d, &small_cfg(), 7).unwrap();
        let b = run_swarm(&d, &small_cfg(), 7).unwrap();
        assert_eq!(a.tuples.len(), b.tuples.len());
        for (x, y) in a.tuples.iter().zip(&b.tuples) {
            assert_eq!(x.mu.x.to_bits(), y.mu.x.to_bits());
            assert_eq!(x.mu.y.to_bits(), y.mu.y.to_bits());
            assert_eq!(x.sigma[(0, 1)].to_bits(), y.sigma[(0, 1)].to_bits());
        }
        for (x, y) in a.paths.iter().flatten().zip(b.paths.iter().flatten()) {
            assert_eq!(x.x.to_bits(), y.x.to_bits());
            assert_eq!(x.y.to_bits(), y.y.to_bits());
        }
        let c = run_swarm(&d, &small_cfg(), 8).unwrap();
        assert_ne!(
            a.paths[0].last().unwrap().x.to_bits(),
            c.paths[0].last().unwrap().x.to_bits()
        );
    }

    #[test]
    fn true_positions_stay_free() {
        let d = test_domain();
        let out = run_swarm(&d, &small_cfg(), 99).unwrap();
        for p in out.paths.iter().flatten() {
            assert!(d.bounds.contains(p));
            assert!(d.is_free(p).unwrap());
        }
    }

    #[test]
    fn speed_is_reset_by_resample_without_noise() {
        let d = test_domain();
        let cfg = SimConfig {
            robots: 2,
            duration: 5.0,
            heading_resample_prob: 1.0,
            process_noise: 0.0,
            ..SimConfig::default()
        };
        let out = run_swarm(&d, &cfg, 5).unwrap();
        // With resampling every step and no process noise, speed is exactly v
        // whenever the step was accepted on the first attempt; rejected
        // attempts also leave a freshly sampled velocity of norm v.
        let steps = cfg.steps();
        for j in 0..cfg.robots {
            for k in 1..steps {
                let v = (out.paths[j][k] - out.paths[j][k - 1]) / cfg.dt;
                let norm = v.norm();
                // Either the robot moved with ||V|| = v or held still.
                assert!(norm < 1e-9 || (norm - cfg.speed).abs() < 1e-9, "norm {norm}");
            }
        }
    }

    #[test]
    fn boxed_in_robot_holds_position() {
        // Workspace so small that any step at high speed exits the bounds.
        let bounds = Rect::new(0.0, 0.0, 0.05, 0.05);
        let d = DomainSpec {
            bounds,
            obstacles: vec![],
            transmitters: vec![
                Transmitter { pos: Point2::new(-0.2, -0.2), k: 1.0, pow: 1.0, alpha: 2.0 },
                Transmitter { pos: Point2::new(0.3, -0.2), k: 1.0, pow: 1.0, alpha: 2.0 },
            ],
            grid: GridSpec::tile(&bounds, 5, 5).unwrap(),
        };
        let cfg = SimConfig {
            robots: 1,
            duration: 1.0,
            speed: 10.0,
            process_noise: 0.0,
            start_strip_depth: 0.05,
            ..SimConfig::default()
        };
        let out = run_swarm(&d, &cfg, 3).unwrap();
        let first = out.paths[0][0];
        for p in &out.paths[0] {
            assert_eq!(p, &first);
        }
    }

    #[test]
    fn measurement_is_exact_without_noise() {
        let d = test_domain();
        let cfg = SimConfig { signal_noise: 0.0, velocity_noise: 0.0, ..SimConfig::default() };
        let state = RobotState { pos: Point2::new(0.5, 0.5), vel: Vector2::new(0.1, -0.05) };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = measure(&state, &d, &cfg, &mut rng);
        for (i, tx) in d.transmitters.iter().enumerate() {
            assert_eq!(m.signals[i], tx.signal_at(&state.pos));
        }
        assert_eq!(m.velocity, state.vel);
    }

    #[test]
    fn spatial_hash_finds_close_pairs() {
        let pts = vec![
            Point2::new(0.5, 0.5),
            Point2::new(0.54, 0.5),
            Point2::new(1.5, 1.5),
        ];
        let h = SpatialHash::build(&pts, 0.06);
        assert!(h.any_within(&pts[0], 0.06, 0));
        assert!(!h.any_within(&pts[2], 0.06, 2));
        // Exactly at the radius is not "within" (strict comparison).
        let pts2 = vec![Point2::new(0.0, 0.0), Point2::new(0.06, 0.0)];
        let h2 = SpatialHash::build(&pts2, 0.06);
        assert!(!h2.any_within(&pts2[0], 0.06, 0));
    }

    #[test]
    fn filter_tracks_truth() {
        let d = test_domain();
        let out = run_swarm(&d, &small_cfg(), 21).unwrap();
        let errs: Vec<f64> =
            out.records.iter().map(|r| (r.true_pos - r.est_pos).norm()).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!(mean < 0.05, "mean position error {mean}");
    }

    #[test]
    fn sigma_norms_are_bounded_relative_to_median() {
        let d = test_domain();
        let cfg = SimConfig { robots: 10, duration: 60.0, ..SimConfig::default() };
        let out = run_swarm(&d, &cfg, 13).unwrap();
        let mut norms: Vec<f64> = out
            .tuples
            .iter()
            .map(|d| d.sigma.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max))
            .collect();
        norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = norms[norms.len() / 2];
        let max = *norms.last().unwrap();
        // Far-field geometry weakens localization, but the filter must stay
        // bounded: worst-case axis deviation below 10 cm, typical below 3 cm.
        assert!(max < 0.01, "max covariance eigenvalue {max}");
        assert!(median < 9e-4, "median covariance eigenvalue {median}");
    }

    #[test]
    fn rejects_bad_configs() {
        let d = test_domain();
        let bad = SimConfig { record_interval: 0.25, dt: 0.1, ..SimConfig::default() };
        assert!(matches!(run_swarm(&d, &bad, 1), Err(Error::Config(_))));
        let bad2 = SimConfig { robots: 0, ..SimConfig::default() };
        assert!(matches!(run_swarm(&d, &bad2, 1), Err(Error::Config(_))));
    }
}
