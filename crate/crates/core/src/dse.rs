//! Per-partition design space exploration.
//!
//! The search space of a partition is the cross product of its layers'
//! feasible parallelism configurations. Simulated annealing walks it by
//! reassigning one tunable of one layer at a time, minimizing the partition
//! execution time `t(B, Γ)` under the hard constraint that the resource
//! estimate fits the device; resource-infeasible moves are rejected
//! outright so the walk stays inside the feasible region. An exhaustive
//! enumeration is provided as the optimality oracle for small partitions.
//!
//! Cost is normalized by the starting latency so temperatures are scale
//! free. When no initial temperature is given it is calibrated from 100
//! probe moves so the initial acceptance ratio of uphill moves is about 0.8;
//! cooling is geometric down to `t_init * t_min_factor`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwblocks::{
    build_block, config_count, divisors, feasible_configs, Calibration, GapMode, HardwareBlock,
    ParallelismConfig, ResourceEstimate,
};
use crate::model::{LayerParams, ModelGraph};
use crate::par::*;
use crate::partition::{Partition, PartitionView};
use crate::perf::{partition_cycles, DeviceSpec, PartitionPerf};
use crate::sdf::{
    assign_branch_buffers, buffer_bram, build_sdfg, depth_total, initiation_intervals,
    workload_matrix, IIResult, SdfGraph,
};

/// Annealing parameters. `t_init = None` probes for a starting temperature.
#[derive(Debug, Clone)]
pub struct AnnealSchedule {
    pub t_init: Option<f64>,
    /// Geometric cooling factor in (0,1).
    pub alpha: f64,
    /// Moves per temperature step; `None` scales with the tunable count.
    pub iters_per_temp: Option<u64>,
    /// Stop when the temperature falls below `t_init * t_min_factor`.
    pub t_min_factor: f64,
    pub seed: u64,
    /// Optional wall-clock budget for one partition's search. Cutting the
    /// search short trades determinism for time; leave unset for
    /// reproducible runs.
    pub time_budget: Option<std::time::Duration>,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            t_init: None,
            alpha: 0.95,
            iters_per_temp: None,
            t_min_factor: 1e-4,
            seed: 0,
            time_budget: None,
        }
    }
}

/// One evaluated configuration of a partition.
#[derive(Debug, Clone)]
pub struct DesignPoint {
    pub partition_id: usize,
    /// Per-layer configuration, in partition node order.
    pub cfgs: Vec<ParallelismConfig>,
    pub graph: SdfGraph,
    pub ii: IIResult,
    /// Block resources plus branch-buffer BRAM.
    pub rsc: ResourceEstimate,
    pub depth_total: u64,
    /// Partition cycles at the evaluation batch size.
    pub cycles: u128,
    pub latency_s: f64,
}

impl DesignPoint {
    pub fn fits(&self, device: &DeviceSpec) -> bool {
        device.fits(&self.rsc)
    }

    /// Report row for this partition.
    pub fn perf(&self, partition: &Partition) -> PartitionPerf {
        PartitionPerf {
            id: self.partition_id,
            kind: partition.kind.to_string(),
            layers: self.cfgs.len(),
            ii_max: rat_to_f64(self.ii.ii_max),
            depth_total: self.depth_total,
            cycles: self.cycles,
            latency_s: self.latency_s,
            rsc: self.rsc,
        }
    }
}

fn rat_to_f64(r: crate::Rat) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Builds, rates and times one configuration of a partition.
pub fn evaluate(
    view: &PartitionView,
    cfgs: &[ParallelismConfig],
    device: &DeviceSpec,
    batch: u64,
    calib: &Calibration,
    gap_mode: GapMode,
) -> Result<DesignPoint> {
    if cfgs.len() != view.len() {
        return Err(Error::Argument(format!(
            "{} configurations for {} layers",
            cfgs.len(),
            view.len()
        )));
    }
    let mut blocks: Vec<HardwareBlock> = Vec::with_capacity(view.len());
    let mut sources = Vec::with_capacity(view.len());
    for pos in 0..view.len() {
        blocks.push(build_block(view.node(pos), &cfgs[pos], calib, gap_mode)?);
        sources.push(view.sources(pos)?);
    }
    let mut graph = build_sdfg(&blocks, &sources, view.output_pos(), device.boundary_rate())?;
    assign_branch_buffers(&mut graph);
    let w = workload_matrix(&graph);
    let ii = initiation_intervals(&w, &graph)?;
    let rsc = blocks
        .iter()
        .map(|b| b.rsc)
        .sum::<ResourceEstimate>()
        .add(&ResourceEstimate { bram18k: buffer_bram(&graph, calib), ..Default::default() });
    let depth = depth_total(&graph);
    let cycles = partition_cycles(depth, ii.ii_max, batch)?;
    let latency_s = cycles as f64 / device.clock;
    Ok(DesignPoint {
        partition_id: view.partition.id,
        cfgs: cfgs.to_vec(),
        graph,
        ii,
        rsc,
        depth_total: depth,
        cycles,
        latency_s,
    })
}

/// How applying a move writes into the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MoveKind {
    /// `s_in` with `s_out` tied (non-convolutions and depth-wise).
    SInTied,
    /// Independent `s_in` (standard convolutions).
    SInFree,
    SOut,
    PMac,
}

#[derive(Debug, Clone)]
pub struct TunableEntry {
    pos: usize,
    kind: MoveKind,
    options: Vec<u64>,
}

/// The movable tunables of a partition: per layer, the stream and MAC
/// parallelism fields that have more than one feasible value.
pub fn tunable_entries(view: &PartitionView) -> Vec<TunableEntry> {
    let mut entries = Vec::new();
    for pos in 0..view.len() {
        let node = view.node(pos);
        match &node.params {
            LayerParams::Conv3D(p) if p.is_depthwise(node.c_in()) => {
                entries.push(TunableEntry {
                    pos,
                    kind: MoveKind::SInTied,
                    options: divisors(node.c_in()),
                });
                entries.push(TunableEntry {
                    pos,
                    kind: MoveKind::PMac,
                    options: divisors(p.kernel_volume()),
                });
            }
            LayerParams::Conv3D(p) => {
                entries.push(TunableEntry {
                    pos,
                    kind: MoveKind::SInFree,
                    options: divisors(node.c_in()),
                });
                entries.push(TunableEntry {
                    pos,
                    kind: MoveKind::SOut,
                    options: divisors(node.c_out()),
                });
                entries.push(TunableEntry {
                    pos,
                    kind: MoveKind::PMac,
                    options: divisors(p.kernel_volume()),
                });
            }
            _ => entries.push(TunableEntry {
                pos,
                kind: MoveKind::SInTied,
                options: divisors(node.c_in()),
            }),
        }
    }
    // Only tunables with an actual choice can generate moves.
    entries.retain(|e| e.options.len() > 1);
    entries
}

fn apply_move(cfgs: &mut [ParallelismConfig], entry: &TunableEntry, value: u64) {
    let cfg = &mut cfgs[entry.pos];
    match entry.kind {
        MoveKind::SInTied => {
            cfg.s_in = value;
            cfg.s_out = value;
        }
        MoveKind::SInFree => cfg.s_in = value,
        MoveKind::SOut => cfg.s_out = value,
        MoveKind::PMac => cfg.p_mac = value,
    }
}

/// Proposes a neighbouring configuration: one random layer, one random
/// tunable, reassigned to a uniformly random feasible value different from
/// the current one. Depth-wise and non-convolution layers keep `s_out` tied
/// to `s_in`; `p_mac` is never selected for non-convolutions.
pub fn neighbor(
    cfgs: &[ParallelismConfig],
    entries: &[TunableEntry],
    rng: &mut ChaCha8Rng,
) -> Vec<ParallelismConfig> {
    let mut next = cfgs.to_vec();
    if entries.is_empty() {
        return next;
    }
    let entry = &entries[rng.gen_range(0..entries.len())];
    let current = match entry.kind {
        MoveKind::SInTied | MoveKind::SInFree => next[entry.pos].s_in,
        MoveKind::SOut => next[entry.pos].s_out,
        MoveKind::PMac => next[entry.pos].p_mac,
    };
    let choices: Vec<u64> = entry.options.iter().copied().filter(|&v| v != current).collect();
    let value = choices[rng.gen_range(0..choices.len())];
    apply_move(&mut next, entry, value);
    next
}

/// Metropolis acceptance: improving moves always, uphill moves with
/// probability `exp(-delta_cost / t)`.
pub fn accept(delta_cost: f64, t: f64, rng: &mut ChaCha8Rng) -> bool {
    debug_assert!(t > 0.0);
    if delta_cost <= 0.0 {
        true
    } else {
        rng.gen::<f64>() < (-delta_cost / t).exp()
    }
}

/// Simulated-annealing search for the lowest-latency feasible configuration
/// of one partition. Deterministic for a given seed (unless a time budget
/// cuts the search short). The returned point is always feasible and never
/// worse than the feasible starting point.
pub fn optimize_partition(
    view: &PartitionView,
    device: &DeviceSpec,
    batch: u64,
    sched: &AnnealSchedule,
    calib: &Calibration,
    gap_mode: GapMode,
) -> Result<DesignPoint> {
    let start_time = std::time::Instant::now();
    let unit: Vec<ParallelismConfig> = vec![ParallelismConfig::unit(); view.len()];
    let start = evaluate(view, &unit, device, batch, calib, gap_mode)?;
    if !start.fits(device) {
        return Err(Error::Infeasible(format!(
            "partition {}: even the all-unit configuration exceeds the device resources",
            view.partition.id
        )));
    }
    let entries = tunable_entries(view);
    if entries.is_empty() {
        return Ok(start);
    }

    let norm = start.latency_s;
    let cost_of = |dp: &DesignPoint| dp.latency_s / norm;
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);

    let mut current = start.clone();
    let mut current_cost = cost_of(&current);
    let mut best = start;
    let mut best_cost = current_cost;

    // Temperature calibration: aim for ~0.8 acceptance of uphill probe moves.
    let t_init = match sched.t_init {
        Some(t) => t,
        None => {
            let mut uphill = Vec::new();
            for _ in 0..100 {
                let cand_cfgs = neighbor(&current.cfgs, &entries, &mut rng);
                if let Ok(cand) = evaluate(view, &cand_cfgs, device, batch, calib, gap_mode) {
                    if cand.fits(device) {
                        let delta = cost_of(&cand) - current_cost;
                        if delta > 0.0 {
                            uphill.push(delta);
                        }
                    }
                }
            }
            if uphill.is_empty() {
                0.1
            } else {
                let mean = uphill.iter().sum::<f64>() / uphill.len() as f64;
                mean / (1.0f64 / 0.8).ln()
            }
        }
    };
    let t_min = t_init * sched.t_min_factor;
    let iters = sched
        .iters_per_temp
        .unwrap_or(100 * entries.len() as u64)
        .max(1);

    let mut t = t_init;
    'anneal: while t > t_min {
        for _ in 0..iters {
            if let Some(budget) = sched.time_budget {
                if start_time.elapsed() > budget {
                    log::info!(
                        "partition {}: time budget reached at T={t:.3e}, best cost {best_cost:.4}",
                        view.partition.id
                    );
                    break 'anneal;
                }
            }
            let cand_cfgs = neighbor(&current.cfgs, &entries, &mut rng);
            let cand = match evaluate(view, &cand_cfgs, device, batch, calib, gap_mode) {
                Ok(c) => c,
                Err(_) => continue,
            };
            if !cand.fits(device) {
                // Hard constraint: infeasible moves are rejected outright.
                continue;
            }
            let cand_cost = cost_of(&cand);
            let delta = cand_cost - current_cost;
            if accept(delta, t, &mut rng) {
                current = cand;
                current_cost = cand_cost;
                if current_cost < best_cost {
                    best = current.clone();
                    best_cost = current_cost;
                }
            }
        }
        log::debug!(
            "partition {}: T={t:.4e} current {current_cost:.4} best {best_cost:.4}",
            view.partition.id
        );
        t *= sched.alpha;
    }
    Ok(best)
}

/// Exhaustively enumerates every feasible configuration (refusing when the
/// space exceeds `cap`) and returns the global latency minimum, ties broken
/// by lexicographically smallest configuration vector.
pub fn brute_force_optimum(
    view: &PartitionView,
    device: &DeviceSpec,
    batch: u64,
    cap: u128,
    calib: &Calibration,
    gap_mode: GapMode,
) -> Result<DesignPoint> {
    let mut count: u128 = 1;
    for pos in 0..view.len() {
        count = count.saturating_mul(config_count(view.node(pos)));
        if count > cap {
            return Err(Error::SpaceTooLarge { count, cap });
        }
    }
    let sets: Vec<Vec<ParallelismConfig>> =
        (0..view.len()).map(|pos| feasible_configs(view.node(pos))).collect();

    let mut odometer = vec![0usize; sets.len()];
    let mut best: Option<DesignPoint> = None;
    loop {
        let cfgs: Vec<ParallelismConfig> =
            odometer.iter().enumerate().map(|(i, &j)| sets[i][j]).collect();
        if let Ok(dp) = evaluate(view, &cfgs, device, batch, calib, gap_mode) {
            if dp.fits(device) {
                // Strict improvement keeps the lexicographically first
                // configuration on ties, since enumeration is ascending.
                let better = match &best {
                    Some(b) => dp.cycles < b.cycles,
                    None => true,
                };
                if better {
                    best = Some(dp);
                }
            }
        }
        // Advance the odometer (last position fastest).
        let mut pos = sets.len();
        loop {
            if pos == 0 {
                return best.ok_or_else(|| {
                    Error::Infeasible(format!(
                        "partition {}: no feasible configuration under the device constraints",
                        view.partition.id
                    ))
                });
            }
            pos -= 1;
            odometer[pos] += 1;
            if odometer[pos] < sets[pos].len() {
                break;
            }
            odometer[pos] = 0;
        }
    }
}

/// Optimizes every partition independently (in parallel with the `parallel`
/// feature). Each partition derives its own RNG stream from the base seed,
/// so results do not depend on scheduling; output order follows partition
/// ids.
pub fn optimize_model(
    graph: &ModelGraph,
    partitions: &[Partition],
    device: &DeviceSpec,
    batch: u64,
    sched: &AnnealSchedule,
    calib: &Calibration,
    gap_mode: GapMode,
) -> Result<Vec<DesignPoint>> {
    let results: Vec<Result<DesignPoint>> = partitions
        .par_iter()
        .map(|p| {
            let view = PartitionView::new(graph, p)?;
            let mut part_sched = sched.clone();
            part_sched.seed = sched
                .seed
                .wrapping_add((p.id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            optimize_partition(&view, device, batch, &part_sched, calib, gap_mode)
        })
        .collect();
    results.into_iter().collect()
}

/// Serializable design document (what `optimize` writes and `report` /
/// `simulate` read back).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignDoc {
    pub model: String,
    pub device: String,
    pub batch: u64,
    pub gap_mode: String,
    pub partitions: Vec<DesignEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignEntry {
    pub id: usize,
    pub kind: String,
    pub layers: Vec<LayerCfg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerCfg {
    pub id: String,
    pub s_in: u64,
    pub s_out: u64,
    pub p_mac: u64,
}

impl DesignDoc {
    pub fn from_points(
        graph: &ModelGraph,
        partitions: &[Partition],
        points: &[DesignPoint],
        device: &DeviceSpec,
        batch: u64,
        gap_mode: GapMode,
    ) -> Self {
        let entries = points
            .iter()
            .map(|dp| {
                let p = &partitions[dp.partition_id];
                DesignEntry {
                    id: p.id,
                    kind: p.kind.to_string(),
                    layers: p
                        .node_ids
                        .iter()
                        .zip(&dp.cfgs)
                        .map(|(id, c)| LayerCfg {
                            id: id.clone(),
                            s_in: c.s_in,
                            s_out: c.s_out,
                            p_mac: c.p_mac,
                        })
                        .collect(),
                }
            })
            .collect();
        DesignDoc {
            model: graph.name.clone(),
            device: device.name.clone(),
            batch,
            gap_mode: match gap_mode {
                GapMode::Exact => "exact".into(),
                GapMode::PriorBatch => "prior".into(),
            },
            partitions: entries,
        }
    }

    /// Extracts the configuration vector for one partition.
    pub fn cfgs_for(&self, partition: &Partition) -> Result<Vec<ParallelismConfig>> {
        let entry = self
            .partitions
            .iter()
            .find(|e| e.id == partition.id)
            .ok_or_else(|| Error::Argument(format!("design has no partition {}", partition.id)))?;
        partition
            .node_ids
            .iter()
            .map(|id| {
                entry
                    .layers
                    .iter()
                    .find(|l| &l.id == id)
                    .map(|l| ParallelismConfig { s_in: l.s_in, s_out: l.s_out, p_mac: l.p_mac })
                    .ok_or_else(|| Error::Argument(format!("design misses layer `{id}`")))
            })
            .collect()
    }
}
