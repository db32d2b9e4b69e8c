//! Synthetic learner generation from archetypes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, SimConfig};
use crate::scoring::{Granularity, TrackingSnapshot, Variable};
use crate::trainer::PerformanceLabel;

/// Sampling distribution for one tracking variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum VarDist {
    /// Integer uniform on `lo..=hi`.
    IntUniform { lo: u32, hi: u32 },
    /// Continuous uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl VarDist {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            VarDist::IntUniform { lo, hi } => f64::from(rng.gen_range(lo..=hi)),
            VarDist::Uniform { lo, hi } if lo == hi => lo,
            VarDist::Uniform { lo, hi } => rng.gen_range(lo..=hi),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            VarDist::IntUniform { lo, hi } => (f64::from(lo), f64::from(hi)),
            VarDist::Uniform { lo, hi } => (lo, hi),
        }
    }

    fn moved_toward(&self, target: (f64, f64), factor: f64) -> VarDist {
        let (lo, hi) = self.bounds();
        let lo = lo + factor * (target.0 - lo);
        let hi = hi + factor * (target.1 - hi);
        match self {
            VarDist::IntUniform { .. } => VarDist::IntUniform {
                lo: lo.round() as u32,
                hi: hi.round() as u32,
            },
            VarDist::Uniform { .. } => VarDist::Uniform { lo, hi },
        }
    }

    fn has_zero_variance(&self) -> bool {
        let (lo, hi) = self.bounds();
        lo == hi
    }
}

/// Generator ground truth for an archetype. Evaluation only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tendency {
    High,
    Low,
}

impl Tendency {
    pub fn label(self) -> PerformanceLabel {
        match self {
            Tendency::High => PerformanceLabel::HighPerformer,
            Tendency::Low => PerformanceLabel::LowPerformer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDists {
    pub d: VarDist,
    pub t: VarDist,
    pub p: VarDist,
    pub s: VarDist,
    pub c: VarDist,
    pub q: VarDist,
    pub r: VarDist,
    pub f: VarDist,
}

impl VariableDists {
    fn as_array(&self) -> [VarDist; 8] {
        [self.d, self.t, self.p, self.s, self.c, self.q, self.r, self.f]
    }

    fn from_array(a: [VarDist; 8]) -> Self {
        VariableDists {
            d: a[0],
            t: a[1],
            p: a[2],
            s: a[3],
            c: a[4],
            q: a[5],
            r: a[6],
            f: a[7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub name: String,
    pub label_tendency: Tendency,
    pub variables: VariableDists,
}

impl ArchetypeSpec {
    pub fn validate(&self) -> Result<(), String> {
        for (var, dist) in Variable::ALL.into_iter().zip(self.variables.as_array()) {
            let (lo, hi) = dist.bounds();
            if lo > hi || !lo.is_finite() || !hi.is_finite() {
                return Err(format!("archetype {}: empty range for {var}", self.name));
            }
            // needs some in-domain mass for rejection sampling to terminate
            if hi < 0.0 || lo > var.domain_max() {
                return Err(format!("archetype {}: range for {var} outside its domain", self.name));
            }
        }
        Ok(())
    }

    fn is_degenerate(&self) -> bool {
        self.variables.as_array().iter().all(VarDist::has_zero_variance)
    }

    /// Each distribution bound moves `factor` of the way toward `target`'s.
    pub fn drifted(&self, target: &VariableDists, factor: f64) -> ArchetypeSpec {
        let mine = self.variables.as_array();
        let theirs = target.as_array();
        let mut out = mine;
        for i in 0..8 {
            out[i] = mine[i].moved_toward(theirs[i].bounds(), factor);
        }
        ArchetypeSpec {
            name: self.name.clone(),
            label_tendency: self.label_tendency,
            variables: VariableDists::from_array(out),
        }
    }

    fn sample_values<R: Rng>(&self, rng: &mut R) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, (var, dist)) in Variable::ALL.into_iter().zip(self.variables.as_array()).enumerate() {
            let mut v = dist.sample(rng);
            let mut tries = 0;
            while !(v >= 0.0 && v <= var.domain_max()) {
                tries += 1;
                v = if tries < 1000 {
                    dist.sample(rng)
                } else {
                    v.clamp(0.0, var.domain_max())
                };
            }
            out[i] = v;
        }
        out
    }
}

/// The two default archetypes. Ranges sit in distinct score bands.
pub fn default_archetypes() -> Vec<ArchetypeSpec> {
    use VarDist::{IntUniform as I, Uniform as U};
    vec![
        ArchetypeSpec {
            name: "high_engaged".into(),
            label_tendency: Tendency::High,
            variables: VariableDists {
                d: I { lo: 3, hi: 7 },
                t: U { lo: 8.0, hi: 20.0 },
                p: I { lo: 3, hi: 6 },
                s: I { lo: 3, hi: 8 },
                c: U { lo: 61.0, hi: 100.0 },
                q: U { lo: 71.0, hi: 100.0 },
                r: U { lo: 4.0, hi: 8.0 },
                f: U { lo: 6.0, hi: 10.0 },
            },
        },
        ArchetypeSpec {
            name: "low_engaged".into(),
            label_tendency: Tendency::Low,
            variables: VariableDists {
                d: I { lo: 0, hi: 2 },
                t: U { lo: 0.0, hi: 4.0 },
                p: I { lo: 0, hi: 2 },
                s: I { lo: 0, hi: 2 },
                c: U { lo: 0.0, hi: 40.0 },
                q: U { lo: 0.0, hi: 55.0 },
                r: U { lo: 0.0, hi: 2.0 },
                f: U { lo: 0.0, hi: 4.0 },
            },
        },
    ]
}

/// Component-wise mean of all archetypes' bounds; drift pulls toward it.
pub fn archetype_centroid(archetypes: &[ArchetypeSpec]) -> VariableDists {
    let n = archetypes.len() as f64;
    let mut out = [VarDist::Uniform { lo: 0.0, hi: 0.0 }; 8];
    for (i, slot) in out.iter_mut().enumerate() {
        let (lo, hi) = archetypes.iter().fold((0.0, 0.0), |acc, a| {
            let b = a.variables.as_array()[i].bounds();
            (acc.0 + b.0, acc.1 + b.1)
        });
        *slot = VarDist::Uniform { lo: lo / n, hi: hi / n };
    }
    VariableDists::from_array(out)
}

/// Shift applied from a given period onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftPlan {
    pub from_period: u32,
    pub factor: f64,
}

/// One client's generated data. `ground_truth` is never used for training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_index: usize,
    pub snapshots: Vec<TrackingSnapshot>,
    pub ground_truth: Vec<PerformanceLabel>,
    /// Archetype name per learner.
    pub learner_archetypes: Vec<String>,
}

fn pick_archetype(cfg: &SimConfig, u: f64) -> &ArchetypeSpec {
    let mut acc = 0.0;
    let mut last = None;
    for (name, p) in &cfg.archetype_mix {
        if *p <= 0.0 {
            continue;
        }
        let spec = cfg.archetypes.iter().find(|a| &a.name == name).expect("validated mix");
        acc += p;
        last = Some(spec);
        if u < acc {
            return spec;
        }
    }
    last.expect("mix has positive mass")
}

/// Generates `learners` learners x `periods` snapshots under seed role `role`.
pub fn generate_population(
    cfg: &SimConfig,
    role: &str,
    learners: usize,
    periods: u32,
    granularity: Granularity,
    drift: Option<DriftPlan>,
) -> (Vec<TrackingSnapshot>, Vec<PerformanceLabel>, Vec<String>) {
    let centroid = archetype_centroid(&cfg.archetypes);
    let mut snapshots = Vec::with_capacity(learners * periods as usize);
    let mut truth = Vec::with_capacity(snapshots.capacity());
    let mut names = Vec::with_capacity(learners);
    for l in 0..learners {
        let mut pick_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &format!("{role}/learner/{l}/archetype")));
        let spec = pick_archetype(cfg, pick_rng.gen::<f64>());
        let shifted = drift.map(|d| spec.drifted(&centroid, d.factor));
        names.push(spec.name.clone());
        for period in 0..periods {
            let active = match (&shifted, drift) {
                (Some(s), Some(d)) if period >= d.from_period => s,
                _ => spec,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.master_seed,
                &format!("{role}/learner/{l}/period/{period}"),
            ));
            let v = active.sample_values(&mut rng);
            snapshots.push(TrackingSnapshot {
                learner_id: format!("{role}/l{l}"),
                period_index: period,
                granularity,
                logins_streak_days: v[0] as u32,
                time_spent_hours: v[1],
                page_visits: v[2] as u32,
                search_queries: v[3] as u32,
                activity_completion_pct: v[4],
                quiz_avg_pct: v[5],
                reaction_ratio: v[6],
                feedback_avg: v[7],
            });
            truth.push(spec.label_tendency.label());
        }
    }
    (snapshots, truth, names)
}

pub fn generate_client(cfg: &SimConfig, client: usize, drift: Option<DriftPlan>) -> ClientDataset {
    let (snapshots, ground_truth, learner_archetypes) = generate_population(
        cfg,
        &format!("client/{client}"),
        cfg.learners_per_client,
        cfg.weeks,
        Granularity::Weekly,
        drift,
    );
    ClientDataset {
        client_index: client,
        snapshots,
        ground_truth,
        learner_archetypes,
    }
}

/// Weekly datasets for every client, deterministic in `master_seed`.
pub fn generate_learners(cfg: &SimConfig) -> Vec<ClientDataset> {
    let active: Vec<&ArchetypeSpec> = cfg
        .archetype_mix
        .iter()
        .filter(|(_, p)| **p > 0.0)
        .filter_map(|(n, _)| cfg.archetypes.iter().find(|a| &a.name == n))
        .collect();
    if active.len() == 1 && active[0].is_degenerate() {
        log::warn!(
            "archetype mix is a single zero-variance archetype ({}); clustering will fail",
            active[0].name
        );
    }
    (0..cfg.n_clients).map(|c| generate_client(cfg, c, None)).collect()
}

/// Server-side held-out set with generator ground truth.
pub fn generate_validation(
    cfg: &SimConfig,
    drift: Option<DriftPlan>,
) -> (Vec<TrackingSnapshot>, Vec<PerformanceLabel>) {
    let (s, t, _) = generate_population(
        cfg,
        "validation",
        cfg.validation_learners,
        cfg.weeks,
        Granularity::Weekly,
        drift,
    );
    (s, t)
}
