#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use reflectsim::allocator::{
    achievable_distance, user_rate, Allocation, Discretization, Normalizers, ResourceProblem, SearchMode, Totals,
    User,
};
use reflectsim::geometry::Vec3;
use reflectsim::scene::{Scene, SceneSpec};

/// Closed box `[0, w] × [0, d] × [0, h]` with all six faces.
pub fn box_room(tx: Vec3, w: f64, d: f64, h: f64, loss_db: f64) -> SceneSpec {
    SceneSpec::new(tx)
        .wall("south", Vec3::ZERO, Vec3::new(w, 0.0, 0.0), Vec3::new(0.0, 0.0, h), loss_db)
        .wall("north", Vec3::new(0.0, d, 0.0), Vec3::new(w, 0.0, 0.0), Vec3::new(0.0, 0.0, h), loss_db)
        .wall("west", Vec3::ZERO, Vec3::new(0.0, d, 0.0), Vec3::new(0.0, 0.0, h), loss_db)
        .wall("east", Vec3::new(w, 0.0, 0.0), Vec3::new(0.0, d, 0.0), Vec3::new(0.0, 0.0, h), loss_db)
        .wall("floor", Vec3::ZERO, Vec3::new(w, 0.0, 0.0), Vec3::new(0.0, d, 0.0), loss_db)
        .wall("ceiling", Vec3::new(0.0, 0.0, h), Vec3::new(w, 0.0, 0.0), Vec3::new(0.0, d, 0.0), loss_db)
}

pub fn random_point_in(rng: &mut ChaCha8Rng, w: f64, d: f64, h: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(0.3..w - 0.3),
        rng.random_range(0.3..d - 0.3),
        rng.random_range(0.3..h - 0.3),
    )
}

/// A random allocation problem whose exhaustive grid has at most
/// `max_combinations` points.
pub fn random_problem(rng: &mut ChaCha8Rng, users: usize, max_combinations: u128) -> ResourceProblem {
    loop {
        let (w, d, h) = (rng.random_range(4.0..12.0), rng.random_range(4.0..12.0), 3.0);
        let tx = random_point_in(rng, w, d, h);
        let scene = box_room(tx, w, d, h, rng.random_range(5.0..20.0)).build().unwrap();
        let mut us = Vec::new();
        while us.len() < users {
            let p = random_point_in(rng, w, d, h);
            if p.distance(tx) > 0.5 {
                us.push(User {
                    position: p,
                    rate_threshold_bps: if rng.random_bool(0.5) { 0.0 } else { rng.random_range(1e8..4e10) },
                });
            }
        }
        let levels_n = rng.random_range(1..=3);
        let mut levels: Vec<f64> = (0..levels_n).map(|_| (rng.random_range(1..=20) as f64) * 0.1).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let antenna_block = rng.random_range(1..=64);
        let element_block = rng.random_range(1..=16);
        let n_blocks = rng.random_range(1..=4u64);
        let m_blocks = rng.random_range(1..=4u64);
        let problem = ResourceProblem {
            scene: scene.clone(),
            users: us,
            totals: Totals {
                p_t_tot_w: levels.iter().sum::<f64>() * rng.random_range(0.5..1.5),
                n_a_tot: n_blocks * antenna_block + rng.random_range(0..antenna_block),
                m_s_tot: m_blocks * element_block,
            },
            snr_threshold_db: rng.random_range(0.0..40.0),
            objective_weight: rng.random_range(0.0..=1.0),
            discretization: Discretization {
                power_levels_w: levels,
                antenna_block,
                element_block,
            },
            normalizers: Normalizers {
                distance_m: rng.random_range(1.0..20.0),
                rate_bps: rng.random_range(1e10..1e12),
            },
            mode: SearchMode::Exhaustive,
        };
        if combinations(&problem) <= max_combinations {
            return problem;
        }
    }
}

fn options(problem: &ResourceProblem) -> Vec<Allocation> {
    let d = &problem.discretization;
    let t = &problem.totals;
    let mut powers = vec![0.0];
    powers.extend(d.power_levels_w.iter().copied().filter(|p| *p > 0.0));
    powers.retain(|p| *p <= t.p_t_tot_w * (1.0 + 1e-12));
    let mut out = Vec::new();
    for &p_w in &powers {
        for a in 0..=t.n_a_tot / d.antenna_block {
            for e in 0..=t.m_s_tot / d.element_block {
                out.push(Allocation {
                    p_w,
                    n_a: a * d.antenna_block,
                    m_s: e * d.element_block,
                });
            }
        }
    }
    out
}

pub fn combinations(problem: &ResourceProblem) -> u128 {
    (options(problem).len() as u128).pow(problem.users.len() as u32)
}

pub struct OracleResult {
    pub plan: Vec<Allocation>,
    pub sum_distance_m: f64,
    pub sum_rate_bps: f64,
    pub scalarized: f64,
}

fn lex_greater(a: &[Allocation], b: &[Allocation]) -> bool {
    for (x, y) in a.iter().zip(b) {
        let ox = (x.p_w, x.n_a, x.m_s);
        let oy = (y.p_w, y.n_a, y.m_s);
        match ox.partial_cmp(&oy).unwrap() {
            std::cmp::Ordering::Greater => return true,
            std::cmp::Ordering::Less => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Plain odometer enumeration over every user's grid, scored through the
/// public per-user functions.
pub fn brute_force(problem: &ResourceProblem) -> Option<OracleResult> {
    let opts = options(problem);
    let k = problem.users.len();
    let table: Vec<Vec<(f64, f64)>> = (0..k)
        .map(|u| {
            opts.iter()
                .map(|a| {
                    (
                        achievable_distance(problem, u, *a).unwrap(),
                        user_rate(problem, u, *a).unwrap(),
                    )
                })
                .collect()
        })
        .collect();
    let t = &problem.totals;
    let lambda = problem.objective_weight;
    let mut idx = vec![0usize; k];
    let mut best: Option<(OracleResult, f64)> = None;
    loop {
        let plan: Vec<Allocation> = idx.iter().map(|&i| opts[i]).collect();
        let power: f64 = plan.iter().map(|a| a.p_w).sum();
        let fits = power <= t.p_t_tot_w * (1.0 + 1e-12)
            && plan.iter().map(|a| a.n_a).sum::<u64>() <= t.n_a_tot
            && plan.iter().map(|a| a.m_s).sum::<u64>() <= t.m_s_tot
            && (0..k).all(|u| table[u][idx[u]].1 >= problem.users[u].rate_threshold_bps);
        if fits {
            let d: f64 = (0..k).map(|u| table[u][idx[u]].0).sum();
            let r: f64 = (0..k).map(|u| table[u][idx[u]].1).sum();
            let s = lambda * d / problem.normalizers.distance_m + (1.0 - lambda) * r / problem.normalizers.rate_bps;
            let take = match &best {
                None => true,
                Some((b, bp)) => {
                    s > b.scalarized || (s == b.scalarized && (power < *bp || (power == *bp && lex_greater(&plan, &b.plan))))
                }
            };
            if take {
                best = Some((
                    OracleResult {
                        plan,
                        sum_distance_m: d,
                        sum_rate_bps: r,
                        scalarized: s,
                    },
                    power,
                ));
            }
        }
        let mut u = k;
        loop {
            if u == 0 {
                return best.map(|b| b.0);
            }
            u -= 1;
            idx[u] += 1;
            if idx[u] < opts.len() {
                break;
            }
            idx[u] = 0;
        }
    }
}

pub fn free_space(tx: Vec3) -> Scene {
    SceneSpec::new(tx).build().unwrap()
}
