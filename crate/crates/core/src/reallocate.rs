//! Backbone construction and resource reallocation.
//!
//! The planner first shrinks the network uniformly until it consumes at most
//! `lambda * M` FLOPs, parks the rest of the budget in a pool, then hands the
//! pool out to layer groups according to an allocation policy. Each group
//! spends its share by scaling all of its layers with one common multiplier.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archgraph::{check_dense, round_channels, scale_dense, ChannelConfig, ModelGraph};
use crate::costmodel::dense_flops;
use crate::error::{Error, Result};
use crate::grouping::{couple_channels, partition_groups, CouplingClasses, GroupPartition};
use crate::importance::{group_importance, GroupImportance, ImportanceReport};

pub const DEFAULT_LAMBDA: f64 = 0.8;

/// Resolution of the multiplier bisections.
const RESOLUTION: f64 = 1e-4;
const UNIFORM_STEPS: u32 = 10_000;
/// Upper bound on redistribution passes after a group saturates.
const MAX_SPILL_PASSES: usize = 256;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// Seeded generator behind the random policy. ChaCha8 output is specified
/// bit-for-bit, so plans reproduce across platforms.
pub type PolicyRng = ChaCha8Rng;

pub fn policy_rng(seed: u64) -> PolicyRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Shares proportional to group importance.
    ImportanceGuided,
    /// Whole quota to the most important group.
    WinnerTakeAll,
    /// Equal split.
    Uniform,
    /// Shares proportional to a seeded random positive vector.
    Random,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::ImportanceGuided,
        Policy::WinnerTakeAll,
        Policy::Uniform,
        Policy::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::ImportanceGuided => "importance_guided",
            Policy::WinnerTakeAll => "winner_take_all",
            Policy::Uniform => "uniform",
            Policy::Random => "random",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == norm)
            .ok_or_else(|| Error::Domain(format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    /// `M`, the FLOPs budget.
    pub target_flops: u64,
    pub lambda: f64,
    pub policy: Policy,
    pub rounds: usize,
    pub seed: u64,
}

impl PlanRequest {
    pub fn new(target_flops: u64) -> Self {
        Self {
            target_flops,
            lambda: DEFAULT_LAMBDA,
            policy: Policy::ImportanceGuided,
            rounds: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_budget(self.target_flops, self.lambda)?;
        if self.rounds == 0 {
            return Err(Error::Domain("rounds must be at least 1".into()));
        }
        Ok(())
    }
}

fn validate_budget(target_flops: u64, lambda: f64) -> Result<()> {
    if target_flops == 0 {
        return Err(Error::Domain("target flops must be positive".into()));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Domain(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    Ok(())
}

/// FLOPs withheld from the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourcePool {
    /// `M - backbone_flops`.
    pub total: u64,
    pub remaining: u64,
    /// Nominal per-round quota, `total / rounds`.
    pub round_quota: u64,
}

impl ResourcePool {
    fn new(total: u64, rounds: usize) -> Self {
        Self {
            total,
            remaining: total,
            round_quota: total / rounds as u64,
        }
    }

    /// Round `r` gets an equal slice of what is left; the last round takes
    /// everything that remains.
    fn quota_for(&self, round: usize, rounds: usize) -> u64 {
        if round + 1 >= rounds {
            self.remaining
        } else {
            self.remaining / (rounds - round) as u64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub config: ChannelConfig,
    /// Uniform width multiplier `u`.
    pub multiplier: f64,
    pub flops: u64,
    pub pool: ResourcePool,
}

/// Largest uniform multiplier on a `1e-4` grid whose network fits in
/// `lambda * target_flops`.
pub fn build_backbone(graph: &ModelGraph, target_flops: u64, lambda: f64) -> Result<Backbone> {
    validate_budget(target_flops, lambda)?;
    let coupling = couple_channels(graph);
    let (widths, multiplier, flops) = backbone_dense(graph, &coupling, target_flops, lambda)?;
    Ok(Backbone {
        config: ChannelConfig::from_dense(graph, &widths),
        multiplier,
        flops,
        pool: ResourcePool::new(target_flops.saturating_sub(flops), 1),
    })
}

fn backbone_dense(
    graph: &ModelGraph,
    coupling: &CouplingClasses,
    target_flops: u64,
    lambda: f64,
) -> Result<(Vec<usize>, f64, u64)> {
    let budget = (lambda * target_flops as f64).floor() as u64;

    let mut minimal = graph.widths();
    for class in coupling.classes().iter().filter(|c| !c.pinned) {
        for &m in &class.members {
            minimal[m] = 1;
        }
    }
    let minimum = dense_flops(graph, &minimal);
    if minimum > budget {
        return Err(Error::Infeasible { budget, minimum });
    }

    let at = |k: u32| -> (Vec<usize>, u64) {
        let w = scale_dense(graph, coupling, k as f64 / UNIFORM_STEPS as f64).expect("grid multipliers lie in (0, 1]");
        let f = dense_flops(graph, &w);
        (w, f)
    };

    let (full, full_flops) = at(UNIFORM_STEPS);
    if full_flops <= budget {
        return Ok((full, 1.0, full_flops));
    }
    let (lowest, lowest_flops) = at(1);
    if lowest_flops > budget {
        // only reachable for layers wider than 5000 channels
        return Ok((minimal, 1.0 / UNIFORM_STEPS as f64, minimum));
    }
    // invariant: flops(lo) <= budget < flops(hi)
    let (mut lo, mut hi) = (1u32, UNIFORM_STEPS);
    let mut best = (lowest, lowest_flops);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let (w, f) = at(mid);
        if f <= budget {
            lo = mid;
            best = (w, f);
        } else {
            hi = mid;
        }
    }
    Ok((best.0, lo as f64 / UNIFORM_STEPS as f64, best.1))
}

/// Per-group weights for `policy`, restricted to groups marked `open`.
fn policy_weights(policy: Policy, t: &[f64], random: &[f64], open: &[bool]) -> Vec<f64> {
    let masked =
        |w: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..t.len()).map(|i| if open[i] { w(i) } else { 0.0 }).collect() };
    match policy {
        Policy::ImportanceGuided => {
            let w = masked(&|i| t[i]);
            if w.iter().sum::<f64>() > 0.0 {
                w
            } else {
                log::warn!("all group importances are zero; falling back to uniform shares");
                masked(&|_| 1.0)
            }
        }
        Policy::WinnerTakeAll => {
            let mut best: Option<usize> = None;
            for i in (0..t.len()).filter(|&i| open[i]) {
                if best.is_none_or(|b| t[i] > t[b]) {
                    best = Some(i);
                }
            }
            let mut w = vec![0.0; t.len()];
            if let Some(b) = best {
                w[b] = 1.0;
            }
            w
        }
        Policy::Uniform => masked(&|_| 1.0),
        Policy::Random => masked(&|i| random[i]),
    }
}

/// Splits `quota` proportionally to `weights` with the largest-remainder
/// method. The parts always sum to `quota` exactly; zero-weight entries get
/// nothing unless every weight is zero, in which case the split is equal.
pub fn apportion(quota: u64, weights: &[f64]) -> Vec<u64> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = if total > 0.0 { weights.to_vec() } else { vec![1.0; n] };
    let total: f64 = weights.iter().sum();
    let q = quota as f64;
    let exact: Vec<f64> = weights.iter().map(|w| q * (w / total)).collect();
    let mut parts: Vec<u64> = exact.iter().map(|e| (e.floor() as u64).min(quota)).collect();

    let mut order: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });

    let mut assigned: u64 = parts.iter().sum();
    // floating-point floors can overshoot by a unit or two on huge quotas
    while assigned > quota {
        let i = *order
            .iter()
            .rev()
            .find(|&&i| parts[i] > 0)
            .expect("some part is positive");
        parts[i] -= 1;
        assigned -= 1;
    }
    let mut k = 0;
    while assigned < quota {
        parts[order[k % order.len()]] += 1;
        assigned += 1;
        k += 1;
    }
    parts
}

/// Shares `R_i` of `quota` for each group.
pub fn apply_policy(policy: Policy, importance: &GroupImportance, quota: u64, rng: &mut PolicyRng) -> Result<Vec<u64>> {
    if importance.is_empty() {
        return Err(Error::Domain("no groups to allocate to".into()));
    }
    let g = importance.len();
    let random = draw_random(policy, g, rng);
    let open = vec![true; g];
    Ok(apportion(
        quota,
        &policy_weights(policy, importance.values(), &random, &open),
    ))
}

fn draw_random(policy: Policy, g: usize, rng: &mut PolicyRng) -> Vec<f64> {
    if policy == Policy::Random {
        // (0, 1]
        (0..g).map(|_| 1.0 - rng.random::<f64>()).collect()
    } else {
        Vec::new()
    }
}

/// Result of spending shares on a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub config: ChannelConfig,
    /// `s_i >= 1` per group.
    pub multipliers: Vec<f64>,
    /// FLOPs actually added while solving each group.
    pub spent: Vec<u64>,
    /// Every member of the group sits at its original width.
    pub capped: Vec<bool>,
}

/// Linear expansion: for each group in order, the largest common multiplier
/// `s_i >= 1` whose rounded widths add at most `R_i` FLOPs to the network as
/// it stands after the earlier groups.
pub fn expand_groups(
    graph: &ModelGraph,
    config: &ChannelConfig,
    partition: &GroupPartition,
    shares: &[u64],
) -> Result<Expansion> {
    if shares.len() != partition.len() {
        return Err(Error::Domain(format!(
            "{} shares for {} groups",
            shares.len(),
            partition.len()
        )));
    }
    let mut widths = config.to_dense(graph)?;
    check_dense(graph, &couple_channels(graph), &widths)?;
    let (multipliers, spent) = expand_dense(graph, partition, &mut widths, shares);
    let capped = (0..partition.len())
        .map(|g| group_capped(graph, partition, g, &widths))
        .collect();
    Ok(Expansion {
        config: ChannelConfig::from_dense(graph, &widths),
        multipliers,
        spent,
        capped,
    })
}

fn expand_dense(
    graph: &ModelGraph,
    partition: &GroupPartition,
    widths: &mut [usize],
    shares: &[u64],
) -> (Vec<f64>, Vec<u64>) {
    let mut multipliers = vec![1.0; partition.len()];
    let mut spent = vec![0; partition.len()];
    for (gi, group) in partition.groups().iter().enumerate() {
        let share = shares[gi];
        if share == 0 {
            continue;
        }
        let base: Vec<(usize, usize, usize)> = group
            .members
            .iter()
            .map(|&m| (m, widths[m], graph.layers()[m].out_channels))
            .collect();
        let start = dense_flops(graph, widths);

        let eval = |s: f64, widths: &mut [usize]| -> u64 {
            for &(m, b, cap) in &base {
                widths[m] = round_channels(s * b as f64, cap);
            }
            dense_flops(graph, widths) - start
        };

        let ceiling = base
            .iter()
            .map(|&(_, b, cap)| cap as f64 / b as f64)
            .fold(1.0, f64::max);
        let s = if ceiling <= 1.0 {
            1.0
        } else if eval(ceiling, widths) <= share {
            ceiling
        } else {
            let (mut lo, mut hi) = (1.0, ceiling);
            while hi - lo > RESOLUTION {
                let mid = 0.5 * (lo + hi);
                if eval(mid, widths) <= share {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        spent[gi] = eval(s, widths);
        multipliers[gi] = s;
    }
    (multipliers, spent)
}

fn group_capped(graph: &ModelGraph, partition: &GroupPartition, g: usize, widths: &[usize]) -> bool {
    partition.groups()[g]
        .members
        .iter()
        .all(|&m| widths[m] >= graph.layers()[m].out_channels)
}

/// Group indices from least to most important, ties by index.
fn ascending(importance: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[a].total_cmp(&importance[b]).then(a.cmp(&b)));
    order
}

/// Removes channels until the network fits under `ceiling`: one channel at a
/// time from the widest coupling class of the least important group that can
/// still shrink.
pub fn repair_to_budget(
    graph: &ModelGraph,
    config: &ChannelConfig,
    partition: &GroupPartition,
    importance: &GroupImportance,
    ceiling: u64,
) -> Result<ChannelConfig> {
    let mut widths = config.to_dense(graph)?;
    let coupling = couple_channels(graph);
    repair_dense(
        graph,
        &coupling,
        partition,
        &mut widths,
        &ascending(importance.values()),
        ceiling,
    )?;
    Ok(ChannelConfig::from_dense(graph, &widths))
}

fn repair_dense(
    graph: &ModelGraph,
    coupling: &CouplingClasses,
    partition: &GroupPartition,
    widths: &mut [usize],
    order: &[usize],
    ceiling: u64,
) -> Result<()> {
    loop {
        let flops = dense_flops(graph, widths);
        if flops <= ceiling {
            return Ok(());
        }
        let victim = order.iter().find_map(|&g| {
            let mut best: Option<usize> = None;
            for &c in &partition.groups()[g].classes {
                let w = widths[coupling.classes()[c].members[0]];
                if w > 1 && best.is_none_or(|b| w > widths[coupling.classes()[b].members[0]]) {
                    best = Some(c);
                }
            }
            best
        });
        let Some(c) = victim else {
            return Err(Error::Infeasible {
                budget: ceiling,
                minimum: flops,
            });
        };
        for &m in &coupling.classes()[c].members {
            widths[m] -= 1;
        }
    }
}

/// Supplies importance statistics for the network as it stands at the start
/// of each round. Called sequentially, never concurrently.
pub trait ImportanceProvider {
    fn report(
        &mut self,
        round: usize,
        graph: &ModelGraph,
        config: &ChannelConfig,
    ) -> std::result::Result<ImportanceReport, BoxError>;
}

impl<F> ImportanceProvider for F
where
    F: FnMut(usize, &ModelGraph, &ChannelConfig) -> std::result::Result<ImportanceReport, BoxError>,
{
    fn report(
        &mut self,
        round: usize,
        graph: &ModelGraph,
        config: &ChannelConfig,
    ) -> std::result::Result<ImportanceReport, BoxError> {
        self(round, graph, config)
    }
}

/// Returns the same report every round.
#[derive(Debug, Clone)]
pub struct StaticReport(pub ImportanceReport);

impl ImportanceProvider for StaticReport {
    fn report(
        &mut self,
        _round: usize,
        _graph: &ModelGraph,
        _config: &ChannelConfig,
    ) -> std::result::Result<ImportanceReport, BoxError> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    #[serde(rename = "T")]
    pub importance: Vec<f64>,
    pub policy: Policy,
    pub quota: u64,
    #[serde(rename = "R")]
    pub shares: Vec<u64>,
    pub spent: Vec<u64>,
    pub multipliers: Vec<f64>,
    pub capped: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub request: PlanRequest,
    pub backbone_multiplier: f64,
    pub backbone_flops: u64,
    pub backbone_config: ChannelConfig,
    pub pool: ResourcePool,
    pub rounds: Vec<RoundRecord>,
    /// Product of the per-round multipliers of each group.
    pub group_multipliers: Vec<f64>,
    pub final_config: ChannelConfig,
    pub achieved_flops: u64,
    /// Budget left unspent, `M - achieved_flops`.
    pub surplus_flops: u64,
}

impl AllocationPlan {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("plan", e))
    }
}

/// Backbone, then `rounds` passes of importance -> shares -> expansion.
///
/// When a group saturates at its original widths, whatever it could not use
/// is offered again to the remaining groups under the same policy. Budget
/// that no group can absorb is left as surplus.
pub fn plan(
    graph: &ModelGraph,
    provider: &mut dyn ImportanceProvider,
    request: &PlanRequest,
) -> Result<AllocationPlan> {
    request.validate()?;
    let coupling = couple_channels(graph);
    let partition = partition_groups(graph, &coupling)?;
    let g = partition.len();

    let (mut widths, backbone_multiplier, backbone_flops) =
        backbone_dense(graph, &coupling, request.target_flops, request.lambda)?;
    let backbone_config = ChannelConfig::from_dense(graph, &widths);
    let mut pool = ResourcePool::new(request.target_flops.saturating_sub(backbone_flops), request.rounds);
    let mut rng = policy_rng(request.seed);
    let mut group_multipliers = vec![1.0; g];
    let mut rounds = Vec::with_capacity(request.rounds);

    for r in 0..request.rounds {
        let config = ChannelConfig::from_dense(graph, &widths);
        let current = graph.with_widths(&widths);
        let report = provider
            .report(r, &current, &config)
            .map_err(|source| Error::Provider { round: r, source })?;
        let importance = group_importance(&report, &partition)?;
        let t = importance.values();

        let quota = pool.quota_for(r, request.rounds);
        let start = dense_flops(graph, &widths);
        let ceiling = start + quota;

        let random = draw_random(request.policy, g, &mut rng);
        let shares = apportion(quota, &policy_weights(request.policy, t, &random, &vec![true; g]));
        let (mut multipliers, mut spent) = expand_dense(graph, &partition, &mut widths, &shares);

        for _ in 0..MAX_SPILL_PASSES {
            let open: Vec<bool> = (0..g).map(|gi| !group_capped(graph, &partition, gi, &widths)).collect();
            if open.iter().all(|&o| o) || !open.iter().any(|&o| o) {
                break;
            }
            let leftover = ceiling.saturating_sub(dense_flops(graph, &widths));
            if leftover == 0 {
                break;
            }
            let extra = apportion(leftover, &policy_weights(request.policy, t, &random, &open));
            let (m2, s2) = expand_dense(graph, &partition, &mut widths, &extra);
            if s2.iter().all(|&s| s == 0) {
                break;
            }
            for gi in 0..g {
                multipliers[gi] *= m2[gi];
                spent[gi] += s2[gi];
            }
        }

        repair_dense(graph, &coupling, &partition, &mut widths, &ascending(t), ceiling)?;

        let capped = (0..g).map(|gi| group_capped(graph, &partition, gi, &widths)).collect();
        for (acc, m) in group_multipliers.iter_mut().zip(&multipliers) {
            *acc *= m;
        }
        pool.remaining = request
            .target_flops
            .saturating_sub(dense_flops(graph, &widths))
            .min(pool.total);
        rounds.push(RoundRecord {
            importance: t.to_vec(),
            policy: request.policy,
            quota,
            shares,
            spent,
            multipliers,
            capped,
        });
    }

    let achieved_flops = dense_flops(graph, &widths);
    Ok(AllocationPlan {
        request: request.clone(),
        backbone_multiplier,
        backbone_flops,
        backbone_config,
        pool,
        rounds,
        group_multipliers,
        final_config: ChannelConfig::from_dense(graph, &widths),
        achieved_flops,
        surplus_flops: request.target_flops.saturating_sub(achieved_flops),
    })
}
