//! Per-user allocation of transmit power, transceiver antennas and
//! reflectarray elements.
//!
//! Each user's rate and SNR-limited reach depend only on its own share, so
//! the objective is separable across users and the constraints are three
//! shared budgets plus a per-user rate floor. Small problems are solved by
//! exhaustive enumeration of the discretized grid; larger ones by greedy
//! marginal-utility ascent.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::sync::Mutex;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::capacity::{capacity_closed_form, thermal_noise_w};
use crate::channel::assemble_channel;
use crate::geometry::Vec3;
use crate::scene::{trace_paths, Scene, TraceError};
use crate::Diagnostics;

/// Resolution of the achievable-distance search (m).
pub const DISTANCE_RESOLUTION_M: f64 = 0.01;

/// Search range along the Tx→user ray when the scene has no surfaces (m).
pub const OPEN_SPACE_RANGE_M: f64 = 1000.0;

/// Largest grid the exhaustive mode will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 10_000_000;

/// Users above which `Auto` mode switches to greedy search.
pub const EXHAUSTIVE_MAX_USERS: usize = 3;

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("invalid problem:\n{0}")]
    InvalidProblem(Diagnostics),
    #[error("unknown user index {0}")]
    UnknownUser(usize),
    #[error("degenerate geometry: user {0} coincides with the transmitter")]
    DegenerateGeometry(usize),
    #[error("search space of {0} combinations exceeds the exhaustive limit")]
    SearchSpaceTooLarge(u128),
    #[error("infeasible thresholds: users {users:?} cannot meet their rate thresholds")]
    Infeasible { users: Vec<usize> },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub position: Vec3,
    pub rate_threshold_bps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Totals {
    pub p_t_tot_w: f64,
    pub n_a_tot: u64,
    pub m_s_tot: u64,
}

/// Grid of per-user choices. Power is picked from `power_levels_w` (zero is
/// always allowed); antennas and elements come in whole blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub power_levels_w: Vec<f64>,
    pub antenna_block: u64,
    pub element_block: u64,
}

/// Fixed scales that make distance and rate commensurable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizers {
    pub distance_m: f64,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    /// Exhaustive for at most three users, greedy otherwise.
    #[default]
    Auto,
    Exhaustive,
    Greedy,
}

#[derive(Debug, Clone)]
pub struct ResourceProblem {
    pub scene: Scene,
    pub users: Vec<User>,
    pub totals: Totals,
    pub snr_threshold_db: f64,
    /// λ: weight of the distance term.
    pub objective_weight: f64,
    pub discretization: Discretization,
    pub normalizers: Normalizers,
    pub mode: SearchMode,
}

impl ResourceProblem {
    pub fn validate(&self) -> Result<(), AllocError> {
        let mut d = Diagnostics::default();
        if self.users.is_empty() {
            d.push("allocation.users", "must not be empty");
        }
        for (k, u) in self.users.iter().enumerate() {
            if !u.position.is_finite() {
                d.push(format!("scene.users[{k}].position"), "must be finite");
            }
            if !(u.rate_threshold_bps >= 0.0) {
                d.push(format!("scene.users[{k}].rate_threshold_bps"), "must be >= 0");
            }
        }
        if !(self.totals.p_t_tot_w > 0.0) {
            d.push("allocation.p_t_tot_w", "must be > 0");
        }
        if self.totals.n_a_tot == 0 {
            d.push("allocation.n_a_tot", "must be > 0");
        }
        if self.totals.m_s_tot == 0 {
            d.push("allocation.m_s_tot", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.objective_weight) {
            d.push("allocation.objective_weight", "must be in [0, 1]");
        }
        if !self.snr_threshold_db.is_finite() {
            d.push("allocation.snr_threshold_db", "must be finite");
        }
        let levels = &self.discretization.power_levels_w;
        if levels.is_empty() {
            d.push("allocation.power_levels_w", "must not be empty");
        }
        if levels.iter().any(|p| !(*p >= 0.0 && p.is_finite())) || levels.windows(2).any(|w| w[1] <= w[0]) {
            d.push("allocation.power_levels_w", "must be finite, >= 0 and strictly increasing");
        }
        if self.discretization.antenna_block == 0 {
            d.push("allocation.antenna_block", "must be > 0");
        }
        if self.discretization.element_block == 0 {
            d.push("allocation.element_block", "must be > 0");
        }
        if !(self.normalizers.distance_m > 0.0) {
            d.push("allocation.distance_norm_m", "must be > 0");
        }
        if !(self.normalizers.rate_bps > 0.0) {
            d.push("allocation.rate_norm_bps", "must be > 0");
        }
        if d.is_empty() {
            Ok(())
        } else {
            Err(AllocError::InvalidProblem(d))
        }
    }

    /// Per-user power choices: zero followed by the configured levels.
    fn power_options(&self) -> Vec<f64> {
        let mut v = vec![0.0];
        v.extend(self.discretization.power_levels_w.iter().copied().filter(|p| *p > 0.0));
        v
    }
}

/// One user's share.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub p_w: f64,
    pub n_a: u64,
    pub m_s: u64,
}

impl Allocation {
    pub const ZERO: Allocation = Allocation { p_w: 0.0, n_a: 0, m_s: 0 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub sum_distance_m: f64,
    pub sum_rate_bps: f64,
    pub scalarized: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserOutcome {
    pub allocation: Allocation,
    pub distance_m: f64,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourcePlan {
    pub users: Vec<UserOutcome>,
    pub objective: Objective,
}

impl ResourcePlan {
    pub fn allocations(&self) -> Vec<Allocation> {
        self.users.iter().map(|u| u.allocation).collect()
    }

    /// `user,p_w,n_a,m_s,d_m,rate_bps`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "p_w", "n_a", "m_s", "d_m", "rate_bps"])?;
        for (k, u) in self.users.iter().enumerate() {
            w.write_record([
                k.to_string(),
                format!("{}", u.allocation.p_w),
                u.allocation.n_a.to_string(),
                u.allocation.m_s.to_string(),
                format!("{:.2}", u.distance_m),
                format!("{:.6e}", u.rate_bps),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A violated constraint and by how much.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: String,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct PlanViolations(pub Vec<Violation>);

impl fmt::Display for PlanViolations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{} violated by {}", v.constraint, v.excess)?;
        }
        Ok(())
    }
}

/// Caches channel gains along each user's Tx→user ray.
struct Evaluator<'a> {
    problem: &'a ResourceProblem,
    noise_w: f64,
    snr_threshold: f64,
    user_gain: Vec<f64>,
    rays: Vec<Ray>,
    profile: Mutex<HashMap<(usize, u64), f64>>,
}

#[derive(Debug, Clone, Copy)]
struct Ray {
    direction: Vec3,
    steps: u64,
}

fn channel_gain(scene: &Scene, point: Vec3) -> Result<f64, AllocError> {
    let paths = trace_paths(scene, point, scene.max_bounces)?;
    let one = Complex64::new(1.0, 0.0);
    let response = assemble_channel(&paths, scene, one, one).expect("traced paths reference scene panels");
    Ok(response.gain())
}

/// Distance from `origin` along unit `dir` to the exit of the box `[lo, hi]`.
fn box_exit(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<f64> {
    let mut t_exit = f64::INFINITY;
    for (o, d, l, h) in [
        (origin.x, dir.x, lo.x, hi.x),
        (origin.y, dir.y, lo.y, hi.y),
        (origin.z, dir.z, lo.z, hi.z),
    ] {
        if d.abs() < 1e-15 {
            if o < l || o > h {
                return None;
            }
            continue;
        }
        let t = if d > 0.0 { (h - o) / d } else { (l - o) / d };
        t_exit = t_exit.min(t);
    }
    (t_exit.is_finite() && t_exit > 0.0).then_some(t_exit)
}

impl<'a> Evaluator<'a> {
    fn new(problem: &'a ResourceProblem) -> Result<Self, AllocError> {
        problem.validate()?;
        let scene = &problem.scene;
        let tx = scene.tx_position;
        let mut user_gain = Vec::with_capacity(problem.users.len());
        let mut rays = Vec::with_capacity(problem.users.len());
        for (k, u) in problem.users.iter().enumerate() {
            let direction = (u.position - tx).normalized().ok_or(AllocError::DegenerateGeometry(k))?;
            user_gain.push(channel_gain(scene, u.position)?);
            let range = match scene.bounds() {
                Some((lo, hi)) => box_exit(tx, direction, lo, hi).unwrap_or(OPEN_SPACE_RANGE_M),
                None => OPEN_SPACE_RANGE_M,
            };
            let steps = (range / DISTANCE_RESOLUTION_M + 1e-9).floor() as u64;
            rays.push(Ray { direction, steps });
        }
        Ok(Self {
            problem,
            noise_w: thermal_noise_w(scene.bandwidth_hz),
            snr_threshold: 10f64.powf(problem.snr_threshold_db / 10.0),
            user_gain,
            rays,
            profile: Mutex::new(HashMap::new()),
        })
    }

    fn check_user(&self, k: usize) -> Result<(), AllocError> {
        if k < self.problem.users.len() {
            Ok(())
        } else {
            Err(AllocError::UnknownUser(k))
        }
    }

    fn rate(&self, k: usize, a: Allocation) -> f64 {
        if a.n_a == 0 || a.m_s == 0 || a.p_w <= 0.0 {
            return 0.0;
        }
        let snr = a.p_w * self.user_gain[k] / self.noise_w;
        capacity_closed_form(snr, a.m_s, a.n_a, self.problem.scene.bandwidth_hz).bits_per_s
    }

    fn gain_at_step(&self, k: usize, step: u64) -> Result<f64, AllocError> {
        if let Some(g) = self.profile.lock().unwrap().get(&(k, step)) {
            return Ok(*g);
        }
        let scene = &self.problem.scene;
        let point = scene.tx_position + self.rays[k].direction * (step as f64 * DISTANCE_RESOLUTION_M);
        let g = channel_gain(scene, point)?;
        self.profile.lock().unwrap().insert((k, step), g);
        Ok(g)
    }

    /// Largest grid distance along the ray whose SNR meets the threshold,
    /// bracketed by bisection.
    fn distance(&self, k: usize, a: Allocation) -> Result<f64, AllocError> {
        let scale = a.p_w * a.n_a as f64 * a.m_s as f64 / self.noise_w;
        if !(scale > 0.0) {
            return Ok(0.0);
        }
        let ok = |step: u64| -> Result<bool, AllocError> { Ok(scale * self.gain_at_step(k, step)? >= self.snr_threshold) };
        let steps = self.rays[k].steps;
        if steps == 0 || !ok(1)? {
            return Ok(0.0);
        }
        if ok(steps)? {
            return Ok(steps as f64 * DISTANCE_RESOLUTION_M);
        }
        let (mut lo, mut hi) = (1u64, steps);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ok(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo as f64 * DISTANCE_RESOLUTION_M)
    }

    fn outcome(&self, k: usize, a: Allocation) -> Result<UserOutcome, AllocError> {
        Ok(UserOutcome {
            allocation: a,
            distance_m: self.distance(k, a)?,
            rate_bps: self.rate(k, a),
        })
    }

    fn objective(&self, outcomes: &[UserOutcome]) -> Objective {
        objective_of(self.problem, outcomes)
    }
}

fn objective_of(problem: &ResourceProblem, outcomes: &[UserOutcome]) -> Objective {
    let sum_distance_m: f64 = outcomes.iter().map(|o| o.distance_m).sum();
    let sum_rate_bps: f64 = outcomes.iter().map(|o| o.rate_bps).sum();
    let lambda = problem.objective_weight;
    let scalarized = lambda * sum_distance_m / problem.normalizers.distance_m
        + (1.0 - lambda) * sum_rate_bps / problem.normalizers.rate_bps;
    Objective {
        sum_distance_m,
        sum_rate_bps,
        scalarized,
    }
}

/// Achievable rate `B·log₂(1 + snr·M_s·N_a)` of user `k`, where `snr` is
/// the transmit power times the traced channel gain over thermal noise.
pub fn user_rate(problem: &ResourceProblem, user_index: usize, allocation: Allocation) -> Result<f64, AllocError> {
    if user_index >= problem.users.len() {
        return Err(AllocError::UnknownUser(user_index));
    }
    let ev = Evaluator::new(problem)?;
    Ok(ev.rate(user_index, allocation))
}

/// Largest distance along the Tx→user ray, inside the scene bounds, at
/// which `p·G(d)·N_a·M_s / N₀` still meets the SNR threshold. Found by
/// bisection to 1 cm; 0 if even the first centimeter fails.
pub fn achievable_distance(problem: &ResourceProblem, user_index: usize, allocation: Allocation) -> Result<f64, AllocError> {
    if user_index >= problem.users.len() {
        return Err(AllocError::UnknownUser(user_index));
    }
    let ev = Evaluator::new(problem)?;
    ev.check_user(user_index)?;
    ev.distance(user_index, allocation)
}

fn violations_of(problem: &ResourceProblem, allocations: &[Allocation], outcomes: &[UserOutcome]) -> Vec<Violation> {
    let mut v = Vec::new();
    let p: f64 = allocations.iter().map(|a| a.p_w).sum();
    let n: u64 = allocations.iter().map(|a| a.n_a).sum();
    let m: u64 = allocations.iter().map(|a| a.m_s).sum();
    let t = &problem.totals;
    if p > t.p_t_tot_w * (1.0 + 1e-12) {
        v.push(Violation {
            constraint: "sum p_t <= p_t_tot".into(),
            excess: p - t.p_t_tot_w,
        });
    }
    if n > t.n_a_tot {
        v.push(Violation {
            constraint: "sum n_a <= n_a_tot".into(),
            excess: (n - t.n_a_tot) as f64,
        });
    }
    if m > t.m_s_tot {
        v.push(Violation {
            constraint: "sum m_s <= m_s_tot".into(),
            excess: (m - t.m_s_tot) as f64,
        });
    }
    for (k, o) in outcomes.iter().enumerate() {
        let thr = problem.users[k].rate_threshold_bps;
        if o.rate_bps < thr {
            v.push(Violation {
                constraint: format!("user {k} rate >= threshold"),
                excess: thr - o.rate_bps,
            });
        }
    }
    v
}

/// Objective triple of a plan, or every violated constraint.
pub fn evaluate_plan(problem: &ResourceProblem, allocations: &[Allocation]) -> Result<Result<Objective, PlanViolations>, AllocError> {
    let ev = Evaluator::new(problem)?;
    if allocations.len() != problem.users.len() {
        return Err(AllocError::UnknownUser(allocations.len().max(problem.users.len()) - 1));
    }
    let outcomes = allocations
        .iter()
        .enumerate()
        .map(|(k, a)| ev.outcome(k, *a))
        .collect::<Result<Vec<_>, _>>()?;
    let v = violations_of(problem, allocations, &outcomes);
    Ok(if v.is_empty() {
        Ok(ev.objective(&outcomes))
    } else {
        Err(PlanViolations(v))
    })
}

/// Grid coordinates of one user's choice: power option, antenna blocks,
/// element blocks.
type Choice = (usize, u64, u64);

struct Grid {
    power: Vec<f64>,
    antenna_blocks: u64,
    element_blocks: u64,
    antenna_block: u64,
    element_block: u64,
}

impl Grid {
    fn new(problem: &ResourceProblem) -> Self {
        let d = &problem.discretization;
        let t = &problem.totals;
        Self {
            power: problem
                .power_options()
                .into_iter()
                .filter(|p| *p <= t.p_t_tot_w * (1.0 + 1e-12))
                .collect(),
            antenna_blocks: t.n_a_tot / d.antenna_block,
            element_blocks: t.m_s_tot / d.element_block,
            antenna_block: d.antenna_block,
            element_block: d.element_block,
        }
    }

    fn allocation(&self, c: Choice) -> Allocation {
        Allocation {
            p_w: self.power[c.0],
            n_a: c.1 * self.antenna_block,
            m_s: c.2 * self.element_block,
        }
    }

    fn options_per_user(&self) -> u128 {
        self.power.len() as u128 * (self.antenna_blocks + 1) as u128 * (self.element_blocks + 1) as u128
    }
}

/// Candidate ordering: higher objective, then lower total power, then the
/// lexicographically larger choice vector (earlier users first).
fn better(a: (f64, f64, &[Choice]), b: (f64, f64, &[Choice])) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.1.total_cmp(&b.1) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.2 > b.2,
        },
    }
}

#[derive(Clone)]
struct Best {
    objective: f64,
    power: f64,
    choices: Vec<Choice>,
}

impl Best {
    fn offer(&mut self, objective: f64, power: f64, choices: &[Choice]) {
        if self.choices.is_empty() || better((objective, power, choices), (self.objective, self.power, &self.choices)) {
            self.objective = objective;
            self.power = power;
            self.choices = choices.to_vec();
        }
    }

    fn merge(mut self, other: Best) -> Best {
        if !other.choices.is_empty() {
            self.offer(other.objective, other.power, &other.choices);
        }
        self
    }
}

/// Solve the allocation problem.
///
/// Exhaustive mode returns the feasible grid point maximizing the
/// scalarized objective. Greedy mode first gives each user with a rate
/// threshold the cheapest share that meets it, seeds every user with one
/// step of each resource, repeatedly grants the single step with the
/// largest objective gain until no budget remains, and finally re-splits
/// pairs of users while that raises the objective.
pub fn optimize(problem: &ResourceProblem) -> Result<ResourcePlan, AllocError> {
    let ev = Evaluator::new(problem)?;
    let grid = Grid::new(problem);
    let exhaustive = match problem.mode {
        SearchMode::Exhaustive => true,
        SearchMode::Greedy => false,
        SearchMode::Auto => problem.users.len() <= EXHAUSTIVE_MAX_USERS,
    };
    let choices = if exhaustive {
        exhaustive_search(&ev, &grid)?
    } else {
        greedy_search(&ev, &grid)?
    };
    let outcomes = choices
        .iter()
        .enumerate()
        .map(|(k, c)| ev.outcome(k, grid.allocation(*c)))
        .collect::<Result<Vec<_>, _>>()?;
    let objective = ev.objective(&outcomes);
    debug_assert!(violations_of(problem, &outcomes.iter().map(|o| o.allocation).collect::<Vec<_>>(), &outcomes).is_empty());
    Ok(ResourcePlan {
        users: outcomes,
        objective,
    })
}

/// Users whose threshold is out of reach even with every resource.
fn binding_users(ev: &Evaluator, grid: &Grid) -> Result<Vec<usize>, AllocError> {
    let all = (grid.power.len() - 1, grid.antenna_blocks, grid.element_blocks);
    let mut binding = Vec::new();
    for (k, u) in ev.problem.users.iter().enumerate() {
        if ev.rate(k, grid.allocation(all)) < u.rate_threshold_bps {
            binding.push(k);
        }
    }
    if binding.is_empty() {
        binding = ev
            .problem
            .users
            .iter()
            .enumerate()
            .filter(|(_, u)| u.rate_threshold_bps > 0.0)
            .map(|(k, _)| k)
            .collect();
    }
    Ok(binding)
}

struct Table {
    outcomes: Vec<Vec<UserOutcome>>,
    antenna_dim: usize,
    element_dim: usize,
}

impl Table {
    fn index(&self, c: Choice) -> usize {
        (c.0 * self.antenna_dim + c.1 as usize) * self.element_dim + c.2 as usize
    }

    fn get(&self, k: usize, c: Choice) -> &UserOutcome {
        &self.outcomes[k][self.index(c)]
    }
}

fn exhaustive_search(ev: &Evaluator, grid: &Grid) -> Result<Vec<Choice>, AllocError> {
    let k_users = ev.problem.users.len();
    let per_user = grid.options_per_user();
    let space = (0..k_users).try_fold(1u128, |acc, _| acc.checked_mul(per_user)).unwrap_or(u128::MAX);
    if space > EXHAUSTIVE_LIMIT {
        return Err(AllocError::SearchSpaceTooLarge(space));
    }
    let antenna_dim = grid.antenna_blocks as usize + 1;
    let element_dim = grid.element_blocks as usize + 1;
    let all_choices: Vec<Choice> = (0..grid.power.len())
        .flat_map(|p| (0..=grid.antenna_blocks).flat_map(move |a| (0..=grid.element_blocks).map(move |e| (p, a, e))))
        .collect();
    let mut outcomes = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let row = all_choices
            .par_iter()
            .map(|c| ev.outcome(k, grid.allocation(*c)))
            .collect::<Result<Vec<_>, _>>()?;
        outcomes.push(row);
    }
    let table = Table {
        outcomes,
        antenna_dim,
        element_dim,
    };
    let p_tot = ev.problem.totals.p_t_tot_w * (1.0 + 1e-12);
    let feasible: Vec<Vec<Choice>> = (0..k_users)
        .map(|k| {
            let thr = ev.problem.users[k].rate_threshold_bps;
            all_choices
                .iter()
                .copied()
                .filter(|c| table.get(k, *c).rate_bps >= thr)
                .collect()
        })
        .collect();

    struct Dfs<'t> {
        ev: &'t Evaluator<'t>,
        grid: &'t Grid,
        table: &'t Table,
        feasible: &'t [Vec<Choice>],
        p_tot: f64,
        stack: Vec<Choice>,
        scratch: Vec<UserOutcome>,
        best: Best,
    }

    impl Dfs<'_> {
        fn run(&mut self, k: usize, power: f64, antennas: u64, elements: u64) {
            if k == self.feasible.len() {
                self.scratch.clear();
                for (u, c) in self.stack.iter().enumerate() {
                    self.scratch.push(*self.table.get(u, *c));
                }
                let obj = self.ev.objective(&self.scratch).scalarized;
                let total_power: f64 = self.stack.iter().map(|c| self.grid.power[c.0]).sum();
                let stack = std::mem::take(&mut self.stack);
                self.best.offer(obj, total_power, &stack);
                self.stack = stack;
                return;
            }
            for &c in &self.feasible[k] {
                let p = power + self.grid.power[c.0];
                if p > self.p_tot || antennas + c.1 > self.grid.antenna_blocks || elements + c.2 > self.grid.element_blocks {
                    continue;
                }
                self.stack.push(c);
                self.run(k + 1, p, antennas + c.1, elements + c.2);
                self.stack.pop();
            }
        }
    }

    let empty = Best {
        objective: f64::NEG_INFINITY,
        power: f64::INFINITY,
        choices: Vec::new(),
    };
    let best = feasible[0]
        .par_iter()
        .map(|&first| {
            let mut dfs = Dfs {
                ev,
                grid,
                table: &table,
                feasible: &feasible,
                p_tot,
                stack: vec![first],
                scratch: Vec::with_capacity(k_users),
                best: empty.clone(),
            };
            let p = grid.power[first.0];
            if p <= p_tot {
                dfs.run(1, p, first.1, first.2);
            }
            dfs.best
        })
        .reduce(|| empty.clone(), Best::merge);
    if best.choices.is_empty() {
        return Err(AllocError::Infeasible {
            users: binding_users(ev, grid)?,
        });
    }
    Ok(best.choices)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Power,
    Antenna,
    Element,
}

const STEPS: [Step; 3] = [Step::Power, Step::Antenna, Step::Element];

struct GreedyState<'g> {
    grid: &'g Grid,
    choices: Vec<Choice>,
    power_left: f64,
    antennas_left: u64,
    elements_left: u64,
}

impl GreedyState<'_> {
    fn next(&self, k: usize, step: Step) -> Option<Choice> {
        let c = self.choices[k];
        match step {
            Step::Power => {
                let next = c.0 + 1;
                let cost = *self.grid.power.get(next)? - self.grid.power[c.0];
                (cost <= self.power_left + 1e-12 * self.grid.power[next]).then_some((next, c.1, c.2))
            }
            Step::Antenna => (self.antennas_left > 0).then_some((c.0, c.1 + 1, c.2)),
            Step::Element => (self.elements_left > 0).then_some((c.0, c.1, c.2 + 1)),
        }
    }

    fn apply(&mut self, k: usize, step: Step, to: Choice) {
        match step {
            Step::Power => self.power_left -= self.grid.power[to.0] - self.grid.power[self.choices[k].0],
            Step::Antenna => self.antennas_left -= 1,
            Step::Element => self.elements_left -= 1,
        }
        self.choices[k] = to;
    }
}

fn greedy_search(ev: &Evaluator, grid: &Grid) -> Result<Vec<Choice>, AllocError> {
    let problem = ev.problem;
    let k_users = problem.users.len();
    let mut state = GreedyState {
        grid,
        choices: vec![(0, 0, 0); k_users],
        power_left: problem.totals.p_t_tot_w,
        antennas_left: grid.antenna_blocks,
        elements_left: grid.element_blocks,
    };
    let lambda = problem.objective_weight;
    let score = |o: &UserOutcome| {
        lambda * o.distance_m / problem.normalizers.distance_m + (1.0 - lambda) * o.rate_bps / problem.normalizers.rate_bps
    };

    // Thresholds first: each bound user, in index order, takes the cheapest
    // share (as a fraction of each total) that meets its rate.
    let mut deficient = Vec::new();
    for k in 0..k_users {
        let thr = problem.users[k].rate_threshold_bps;
        if thr <= 0.0 {
            continue;
        }
        let mut best: Option<(f64, Choice)> = None;
        for p in 0..grid.power.len() {
            let dp = grid.power[p];
            if dp > state.power_left + 1e-12 * dp {
                break;
            }
            for a in 0..=state.antennas_left {
                for e in 0..=state.elements_left {
                    let cost = dp / problem.totals.p_t_tot_w
                        + a as f64 / grid.antenna_blocks.max(1) as f64
                        + e as f64 / grid.element_blocks.max(1) as f64;
                    if best.is_some_and(|b| cost >= b.0) {
                        continue;
                    }
                    if ev.rate(k, grid.allocation((p, a, e))) >= thr {
                        best = Some((cost, (p, a, e)));
                    }
                }
            }
        }
        match best {
            Some((_, c)) => {
                state.power_left -= grid.power[c.0];
                state.antennas_left -= c.1;
                state.elements_left -= c.2;
                state.choices[k] = c;
            }
            None => deficient.push(k),
        }
    }
    if !deficient.is_empty() {
        return Err(AllocError::Infeasible { users: deficient });
    }

    // Seed: one step of every resource for users still lacking it.
    for step in STEPS {
        for k in 0..k_users {
            let c = state.choices[k];
            let lacking = match step {
                Step::Power => c.0 == 0,
                Step::Antenna => c.1 == 0,
                Step::Element => c.2 == 0,
            };
            if lacking {
                if let Some(to) = state.next(k, step) {
                    state.apply(k, step, to);
                }
            }
        }
    }

    let mut current: Vec<UserOutcome> = (0..k_users)
        .map(|k| ev.outcome(k, grid.allocation(state.choices[k])))
        .collect::<Result<_, _>>()?;

    // Marginal-utility ascent until every budget is spent.
    loop {
        let mut best: Option<(f64, usize, Step, Choice, UserOutcome)> = None;
        for k in 0..k_users {
            for step in STEPS {
                let Some(to) = state.next(k, step) else { continue };
                let o = ev.outcome(k, grid.allocation(to))?;
                let gain = score(&o) - score(&current[k]);
                if best.as_ref().is_none_or(|b| gain > b.0) {
                    best = Some((gain, k, step, to, o));
                }
            }
        }
        match best {
            Some((_, k, step, to, o)) => {
                state.apply(k, step, to);
                current[k] = o;
            }
            None => break,
        }
    }

    // Pairwise exchange: pool two users' shares with the leftover budget and
    // re-split, giving the second user everything the first does not take.
    let mut improved = true;
    while improved {
        improved = false;
        for i in 0..k_users {
            for j in 0..k_users {
                if i == j {
                    continue;
                }
                let (ci, cj) = (state.choices[i], state.choices[j]);
                let pool_p = state.power_left + grid.power[ci.0] + grid.power[cj.0];
                let pool_a = state.antennas_left + ci.1 + cj.1;
                let pool_e = state.elements_left + ci.2 + cj.2;
                let before = score(&current[i]) + score(&current[j]);
                let mut best: Option<(f64, Choice, Choice, UserOutcome, UserOutcome)> = None;
                for p in 0..grid.power.len() {
                    let rest = pool_p - grid.power[p];
                    if rest < -1e-12 * pool_p {
                        break;
                    }
                    let Some(q) = grid.power.iter().rposition(|w| *w <= rest + 1e-12 * pool_p) else { continue };
                    for a in 0..=pool_a {
                        for e in 0..=pool_e {
                            let (ni, nj) = ((p, a, e), (q, pool_a - a, pool_e - e));
                            let oi = ev.outcome(i, grid.allocation(ni))?;
                            if oi.rate_bps < problem.users[i].rate_threshold_bps {
                                continue;
                            }
                            let oj = ev.outcome(j, grid.allocation(nj))?;
                            if oj.rate_bps < problem.users[j].rate_threshold_bps {
                                continue;
                            }
                            let s = score(&oi) + score(&oj);
                            if best.as_ref().is_none_or(|b| s > b.0) {
                                best = Some((s, ni, nj, oi, oj));
                            }
                        }
                    }
                }
                if let Some((s, ni, nj, oi, oj)) = best {
                    if s > before + 1e-12 * before.abs() {
                        state.power_left = pool_p - grid.power[ni.0] - grid.power[nj.0];
                        state.antennas_left = pool_a - ni.1 - nj.1;
                        state.elements_left = pool_e - ni.2 - nj.2;
                        state.choices[i] = ni;
                        state.choices[j] = nj;
                        current[i] = oi;
                        current[j] = oj;
                        improved = true;
                    }
                }
            }
        }
    }
    Ok(state.choices)
}
