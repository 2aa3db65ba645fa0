//! Branch-aware synchronous-dataflow matrices of a configured partition.
//!
//! Nodes are `[MemIn] + hardware blocks (topological order) + [MemOut]`;
//! arcs are the tensor values flowing between them. A value produced once
//! may feed several consumers, so an arc row carries exactly one positive
//! (production) entry and one or more negative (consumption) entries — the
//! branch extension over the classic upper bi-diagonal form, which a
//! branch-free chain still reduces to.
//!
//! The topology matrix is the elementwise product `Γ = S ⊙ R` of the stream
//! matrix (parallel streams per port, memory ports carry `BW/2`) and the
//! rate matrix (signed normalized per-stream rates). Entries are exact
//! rationals. The decomposition is elementwise rather than a matrix product:
//! each Γ entry is a single stream-count × rate product, which is what the
//! arcs×nodes layout expresses.
//!
//! Rates are propagated through the pipeline: a block that cannot be fed at
//! its design rate (memory bound at `BW/2`, or starved by a slower upstream
//! block) has all its port rates scaled by the same factor, and normal
//! element-wise inputs equalize to the slower side. Dividing the workload
//! matrix by Γ elementwise yields the initiation-interval matrix `II`, whose
//! maximum governs the steady-state pipeline period.

use num_traits::{Signed, Zero};

use crate::error::{Error, Result};
use crate::hwblocks::{equalize_elementwise, BlockOp, Calibration, HardwareBlock};
use crate::partition::Source;
use crate::Rat;

/// Dense arcs×nodes matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    data: Vec<T>,
}

impl<T: Clone + Default> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::default(); rows * cols] }
    }

    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }
}

/// One data stream: a value with its producer and every consumer endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfArc {
    pub label: String,
    /// Producing node (matrix column).
    pub producer: usize,
    /// `(node, input slot)` consumer endpoints; more than one = multicast.
    pub consumers: Vec<(usize, usize)>,
    /// Elements carried per batch item.
    pub volume: u64,
    /// Parallel streams on the arc (producer side).
    pub streams: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdfNodeOp {
    MemIn,
    MemOut,
    Block(BlockOp),
}

/// Node metadata shared by the matrices and the cycle-level simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfNode {
    pub label: String,
    pub op: SdfNodeOp,
    /// Pipeline-fill latency in cycles (0 for memory ports).
    pub depth: u64,
    /// Cycles to consume one batch item at design rate (0 for memory ports).
    pub cycles: u64,
    pub in_arcs: Vec<usize>,
    pub out_arc: Option<usize>,
    /// Elements consumed per batch item, per input.
    pub w_in: Vec<u64>,
    /// Elements produced per batch item.
    pub w_out: u64,
    /// Design-rate consumption capability, words/cycle per input.
    pub cap_in: Vec<Rat>,
    /// Design-rate production capability, words/cycle.
    pub cap_out: Rat,
    /// Analytic rate scale applied by pipeline propagation, in (0,1].
    pub phi: Rat,
    /// Internal element storage; bounds consumed-ahead in the simulator.
    pub store: u64,
}

/// The configured partition as an SDF graph with its matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGraph {
    pub nodes: Vec<SdfNode>,
    pub arcs: Vec<SdfArc>,
    /// Stream matrix: parallel streams per (arc, node) port.
    pub s: Mat<Rat>,
    /// Signed normalized per-stream rates, |R| in [0,1].
    pub r: Mat<Rat>,
    /// Topology matrix, Γ = S ⊙ R.
    pub gamma: Mat<Rat>,
    /// Extra per-stream buffer words per arc (beyond the default FIFO),
    /// assigned by [`branch_buffers`].
    pub buffers: Vec<u64>,
    /// Memory rate per boundary stream (BW/2).
    pub boundary_rate: Rat,
}

/// Builds the SDF graph of a partition from its configured blocks.
///
/// `sources[k]` gives, per input slot of block `k`, where that input comes
/// from; `output_pos` is the block producing the partition output value.
/// `boundary_rate` is the per-direction memory rate BW/2.
pub fn build_sdfg(
    blocks: &[HardwareBlock],
    sources: &[Vec<Source>],
    output_pos: usize,
    boundary_rate: Rat,
) -> Result<SdfGraph> {
    if blocks.is_empty() {
        return Err(Error::Structure("partition has no blocks".into()));
    }
    if blocks.len() != sources.len() || output_pos >= blocks.len() {
        return Err(Error::Structure("blocks, sources and output position disagree".into()));
    }
    if boundary_rate <= Rat::zero() {
        return Err(Error::Structure("boundary rate must be positive".into()));
    }

    let n_nodes = blocks.len() + 2;
    let mem_in = 0usize;
    let mem_out = n_nodes - 1;
    let node_of = |block_pos: usize| block_pos + 1;

    // Arc 0 is the external input value; arc k+1 is block k's output value.
    let mut arcs: Vec<SdfArc> = Vec::with_capacity(blocks.len() + 1);
    arcs.push(SdfArc {
        label: "in".to_string(),
        producer: mem_in,
        consumers: Vec::new(),
        volume: 0,
        streams: 1,
    });
    for (k, blk) in blocks.iter().enumerate() {
        arcs.push(SdfArc {
            label: blk.id.clone(),
            producer: node_of(k),
            consumers: Vec::new(),
            volume: blk.w_out,
            streams: blk.cfg.s_out,
        });
    }

    for (k, srcs) in sources.iter().enumerate() {
        let blk = &blocks[k];
        if srcs.len() != blk.w_in.len() {
            return Err(Error::Structure(format!(
                "block `{}` has {} inputs but {} sources",
                blk.id,
                blk.w_in.len(),
                srcs.len()
            )));
        }
        for (slot, src) in srcs.iter().enumerate() {
            let arc_idx = match src {
                Source::External => 0,
                Source::Member(j) => {
                    if *j >= k {
                        return Err(Error::Structure(format!(
                            "block `{}` consumes a value produced later in the order",
                            blk.id
                        )));
                    }
                    j + 1
                }
            };
            let arc = &mut arcs[arc_idx];
            if arc_idx == 0 {
                // The external value's volume is defined by its consumers.
                if arc.volume == 0 {
                    arc.volume = blk.w_in[slot];
                    arc.streams = blk.cfg.s_in;
                } else if arc.volume != blk.w_in[slot] {
                    return Err(Error::Shape(format!(
                        "arc `in`: consumers disagree on volume ({} vs {})",
                        arc.volume, blk.w_in[slot]
                    )));
                } else {
                    arc.streams = arc.streams.max(blk.cfg.s_in);
                }
            } else if arc.volume != blk.w_in[slot] {
                return Err(Error::Shape(format!(
                    "arc `{}`: producer volume {} but `{}` consumes {}",
                    arc.label, arc.volume, blk.id, blk.w_in[slot]
                )));
            }
            arc.consumers.push((node_of(k), slot));
        }
    }
    if arcs[0].consumers.is_empty() {
        return Err(Error::Structure("no block consumes the partition input".into()));
    }
    arcs[output_pos + 1].consumers.push((mem_out, 0));
    for arc in &arcs[1..] {
        if arc.consumers.is_empty() {
            return Err(Error::Structure(format!(
                "value `{}` is never consumed; partitions have exactly one external output",
                arc.label
            )));
        }
    }

    // Analytic rate propagation in block order. `supply[a]` is the actual
    // words/cycle produced onto arc `a`.
    let one = Rat::from_integer(1);
    let mut supply: Vec<Rat> = vec![Rat::zero(); arcs.len()];
    supply[0] = boundary_rate;
    let mut phi = vec![one; blocks.len()];
    for (k, blk) in blocks.iter().enumerate() {
        let mut factor = one;
        for (slot, src) in sources[k].iter().enumerate() {
            let arc_idx = match src {
                Source::External => 0,
                Source::Member(j) => j + 1,
            };
            let demand = blk.r_in[slot] * Rat::from_integer(blk.cfg.s_in as i128);
            debug_assert!(demand.is_positive());
            let ratio = supply[arc_idx] / demand;
            if ratio < factor {
                factor = ratio;
            }
        }
        if let BlockOp::EltwiseNormal(_) = blk.op {
            // Structural equalization of same-shape inputs: both sides end
            // up at the lower restricted rate. The shared scale factor
            // reproduces exactly the pairwise rule, asserted here.
            let restricted: Vec<Rat> = sources[k]
                .iter()
                .enumerate()
                .map(|(slot, src)| {
                    let arc_idx = match src {
                        Source::External => 0,
                        Source::Member(j) => j + 1,
                    };
                    let per_stream = supply[arc_idx] / Rat::from_integer(blk.cfg.s_in as i128);
                    blk.r_in[slot].min(per_stream)
                })
                .collect();
            if restricted.len() == 2 {
                let (e1, e2) = equalize_elementwise(restricted[0], restricted[1]);
                debug_assert_eq!(e1, e2);
                debug_assert_eq!(blk.r_in[0] * factor, e1);
            }
        }
        phi[k] = factor;
        supply[k + 1] = blk.r_out * Rat::from_integer(blk.cfg.s_out as i128) * factor;
    }

    // Matrices.
    let n_arcs = arcs.len();
    let mut s = Mat::zeros(n_arcs, n_nodes);
    let mut r = Mat::zeros(n_arcs, n_nodes);
    s.set(0, mem_in, boundary_rate);
    r.set(0, mem_in, one);
    s.set(output_pos + 1, mem_out, boundary_rate);
    r.set(output_pos + 1, mem_out, -one);
    for (k, blk) in blocks.iter().enumerate() {
        let col = node_of(k);
        s.set(k + 1, col, Rat::from_integer(blk.cfg.s_out as i128));
        r.set(k + 1, col, blk.r_out * phi[k]);
        for (slot, src) in sources[k].iter().enumerate() {
            let arc_idx = match src {
                Source::External => 0,
                Source::Member(j) => j + 1,
            };
            s.set(arc_idx, col, Rat::from_integer(blk.cfg.s_in as i128));
            let cur = *r.get(arc_idx, col);
            r.set(arc_idx, col, cur - blk.r_in[slot] * phi[k]);
        }
    }
    let mut gamma = Mat::zeros(n_arcs, n_nodes);
    for a in 0..n_arcs {
        for c in 0..n_nodes {
            gamma.set(a, c, *s.get(a, c) * *r.get(a, c));
        }
    }

    // Node metadata for the report paths and the simulator.
    let mut nodes = Vec::with_capacity(n_nodes);
    nodes.push(SdfNode {
        label: "MemIn".to_string(),
        op: SdfNodeOp::MemIn,
        depth: 0,
        cycles: 0,
        in_arcs: Vec::new(),
        out_arc: Some(0),
        w_in: Vec::new(),
        w_out: arcs[0].volume,
        cap_in: Vec::new(),
        cap_out: boundary_rate,
        phi: one,
        store: 0,
    });
    for (k, blk) in blocks.iter().enumerate() {
        let in_arcs: Vec<usize> = sources[k]
            .iter()
            .map(|src| match src {
                Source::External => 0,
                Source::Member(j) => j + 1,
            })
            .collect();
        nodes.push(SdfNode {
            label: blk.id.clone(),
            op: SdfNodeOp::Block(blk.op),
            depth: blk.depth,
            cycles: blk.cycles,
            in_arcs,
            out_arc: Some(k + 1),
            w_in: blk.w_in.clone(),
            w_out: blk.w_out,
            cap_in: blk
                .r_in
                .iter()
                .map(|ri| *ri * Rat::from_integer(blk.cfg.s_in as i128))
                .collect(),
            cap_out: blk.r_out * Rat::from_integer(blk.cfg.s_out as i128),
            phi: phi[k],
            store: blk.store,
        });
    }
    nodes.push(SdfNode {
        label: "MemOut".to_string(),
        op: SdfNodeOp::MemOut,
        depth: 0,
        cycles: 0,
        in_arcs: vec![output_pos + 1],
        out_arc: None,
        w_in: vec![arcs[output_pos + 1].volume],
        w_out: 0,
        cap_in: vec![boundary_rate],
        cap_out: Rat::zero(),
        phi: one,
        store: 0,
    });

    Ok(SdfGraph {
        nodes,
        arcs,
        s,
        r,
        gamma,
        buffers: vec![0; n_arcs],
        boundary_rate,
    })
}

/// Signed element counts with the same sparsity pattern as Γ.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadMatrix {
    pub w: Mat<i128>,
}

/// Builds the workload matrix: `|W(a,n)|` is the number of elements node `n`
/// moves on arc `a` per batch item, positive for production and negative for
/// consumption. A broadcast vector arc carries `C` elements, not `C·D·H·W`.
pub fn workload_matrix(g: &SdfGraph) -> WorkloadMatrix {
    let mut w = Mat::zeros(g.arcs.len(), g.nodes.len());
    for (a, arc) in g.arcs.iter().enumerate() {
        w.set(a, arc.producer, arc.volume as i128);
        for &(node, _) in &arc.consumers {
            let cur = *w.get(a, node);
            w.set(a, node, cur - arc.volume as i128);
        }
    }
    WorkloadMatrix { w }
}

/// Initiation-interval matrix `II = W / Γ` (elementwise) and its maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct IIResult {
    /// Defined entries are positive; zero marks an absent entry.
    pub ii: Mat<Rat>,
    pub ii_max: Rat,
}

pub fn initiation_intervals(w: &WorkloadMatrix, g: &SdfGraph) -> Result<IIResult> {
    let (rows, cols) = (g.arcs.len(), g.nodes.len());
    if w.w.rows != rows || w.w.cols != cols {
        return Err(Error::Inconsistent("W and Γ dimensions differ".into()));
    }
    let mut ii = Mat::zeros(rows, cols);
    let mut ii_max = Rat::zero();
    for a in 0..rows {
        for c in 0..cols {
            let wv = *w.w.get(a, c);
            let gv = *g.gamma.get(a, c);
            if wv == 0 && gv.is_zero() {
                continue;
            }
            if gv.is_zero() {
                return Err(Error::Inconsistent(format!(
                    "workload without a Γ entry at arc {a}, node {c}"
                )));
            }
            if wv == 0 {
                return Err(Error::Inconsistent(format!(
                    "Γ entry without workload at arc {a}, node {c}"
                )));
            }
            let entry = Rat::from_integer(wv) / gv;
            if !entry.is_positive() {
                return Err(Error::Inconsistent(format!(
                    "W and Γ signs disagree at arc {a}, node {c}"
                )));
            }
            if entry > ii_max {
                ii_max = entry;
            }
            ii.set(a, c, entry);
        }
    }
    if ii_max.is_zero() {
        return Err(Error::Inconsistent("empty initiation-interval matrix".into()));
    }
    Ok(IIResult { ii, ii_max })
}

/// Extra per-stream buffer words per arc that align converging branch paths.
///
/// For every merge node, each input arc receives the difference between the
/// deepest converging path and its own path, where a path's depth is the sum
/// of node depths accumulated from the partition input (the shared prefix up
/// to the fork cancels in the difference).
pub fn branch_buffers(g: &SdfGraph) -> Vec<u64> {
    // Longest-path depth of each value.
    let mut val_depth: Vec<u64> = vec![0; g.arcs.len()];
    for (idx, node) in g.nodes.iter().enumerate() {
        if let Some(out) = node.out_arc {
            if idx == 0 {
                val_depth[out] = 0;
            } else {
                let base = node.in_arcs.iter().map(|&a| val_depth[a]).max().unwrap_or(0);
                val_depth[out] = base + node.depth;
            }
        }
    }
    let mut extra = vec![0u64; g.arcs.len()];
    for node in &g.nodes {
        if node.in_arcs.len() < 2 {
            continue;
        }
        let deepest = node.in_arcs.iter().map(|&a| val_depth[a]).max().unwrap();
        for &a in &node.in_arcs {
            let slack = deepest - val_depth[a];
            extra[a] = extra[a].max(slack);
        }
    }
    extra
}

/// Assigns branch buffers in place.
pub fn assign_branch_buffers(g: &mut SdfGraph) {
    g.buffers = branch_buffers(g);
}

/// Pipeline-fill depth of the whole partition: the sum of node depths plus
/// the extra branch buffering.
pub fn depth_total(g: &SdfGraph) -> u64 {
    g.nodes.iter().map(|n| n.depth).sum::<u64>() + g.buffers.iter().sum::<u64>()
}

/// BRAM blocks consumed by the extra branch buffers (default handshake FIFOs
/// stay in registers).
pub fn buffer_bram(g: &SdfGraph, calib: &Calibration) -> u64 {
    g.arcs
        .iter()
        .zip(&g.buffers)
        .map(|(arc, &extra)| (extra * arc.streams).div_ceil(calib.bram_words))
        .sum()
}

fn fmt_rat(r: &Rat) -> String {
    if r.is_integer() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Renders a matrix as CSV with arc/node header labels.
pub fn matrix_csv<T: Clone + Default, F: Fn(&T) -> String>(
    g: &SdfGraph,
    m: &Mat<T>,
    fmt: F,
) -> String {
    let mut out = String::from("arc");
    for n in &g.nodes {
        out.push(',');
        out.push_str(&n.label);
    }
    out.push('\n');
    for (a, arc) in g.arcs.iter().enumerate() {
        out.push_str(&arc.label);
        for c in 0..m.cols {
            out.push(',');
            out.push_str(&fmt(m.get(a, c)));
        }
        out.push('\n');
    }
    out
}

/// The debug dump: Γ, S, R, W and II as labeled CSV tables. Entries are
/// exact: integers plain, non-integers as `p/q`.
pub fn dump_matrices(g: &SdfGraph, w: &WorkloadMatrix, ii: &IIResult) -> Vec<(&'static str, String)> {
    vec![
        ("gamma", matrix_csv(g, &g.gamma, fmt_rat)),
        ("s", matrix_csv(g, &g.s, fmt_rat)),
        ("r", matrix_csv(g, &g.r, fmt_rat)),
        ("w", matrix_csv(g, &w.w, |v| v.to_string())),
        ("ii", matrix_csv(g, &ii.ii, fmt_rat)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwblocks::{build_block, Calibration, GapMode, ParallelismConfig};
    use crate::model::{
        ActivationParams, ActivationType, ConvParams, ElementWiseMode, ElementWiseOp,
        ElementWiseParams, LayerNode, LayerParams, TensorShape,
    };
    use crate::rat;

    fn relu(id: &str, c: u64, d: u64, h: u64, w: u64) -> LayerNode {
        let sp = TensorShape::new(c, d, h, w);
        LayerNode {
            id: id.into(),
            inputs: vec![],
            sp_in: vec![sp],
            sp_out: sp,
            params: LayerParams::Activation(ActivationParams { t: ActivationType::Relu }),
        }
    }

    fn unit_block(node: &LayerNode) -> HardwareBlock {
        build_block(node, &ParallelismConfig::unit(), &Calibration::default(), GapMode::Exact)
            .unwrap()
    }

    #[test]
    fn linear_chain_matrix_matches_hand_construction() {
        // MemIn -> Relu -> MemOut with s = r = 1 and BW = 4 words/cycle:
        // Γ = [[2, -1, 0], [0, 1, -2]].
        let node = relu("relu", 2, 2, 2, 2);
        let blk = unit_block(&node);
        let g = build_sdfg(&[blk], &[vec![Source::External]], 0, rat(4, 2)).unwrap();
        assert_eq!(*g.gamma.get(0, 0), rat(2, 1));
        assert_eq!(*g.gamma.get(0, 1), rat(-1, 1));
        assert_eq!(*g.gamma.get(0, 2), rat(0, 1));
        assert_eq!(*g.gamma.get(1, 0), rat(0, 1));
        assert_eq!(*g.gamma.get(1, 1), rat(1, 1));
        assert_eq!(*g.gamma.get(1, 2), rat(-2, 1));
    }

    #[test]
    fn gamma_is_elementwise_product_of_s_and_r() {
        let node = relu("relu", 4, 2, 2, 2);
        let blk = unit_block(&node);
        let g = build_sdfg(&[blk], &[vec![Source::External]], 0, rat(8, 2)).unwrap();
        for a in 0..g.arcs.len() {
            for c in 0..g.nodes.len() {
                assert_eq!(*g.gamma.get(a, c), *g.s.get(a, c) * *g.r.get(a, c));
            }
        }
    }

    #[test]
    fn multicast_row_has_one_producer_two_consumers() {
        // in -> {relu1, add}; relu1 -> add: the input value's row carries one
        // positive and two negative entries.
        let sp = TensorShape::new(2, 2, 2, 2);
        let r1 = relu("r1", 2, 2, 2, 2);
        let add = LayerNode {
            id: "add".into(),
            inputs: vec!["ext".into(), "r1".into()],
            sp_in: vec![sp, sp],
            sp_out: sp,
            params: LayerParams::ElementWise(ElementWiseParams {
                t: ElementWiseOp::Add,
                m: ElementWiseMode::Normal,
            }),
        };
        let blocks = vec![unit_block(&r1), unit_block(&add)];
        let sources = vec![vec![Source::External], vec![Source::External, Source::Member(0)]];
        let g = build_sdfg(&blocks, &sources, 1, rat(8, 2)).unwrap();
        let mut pos = 0;
        let mut neg = 0;
        for c in 0..g.nodes.len() {
            let v = *g.gamma.get(0, c);
            if v.is_positive() {
                pos += 1;
            } else if v.is_negative() {
                neg += 1;
            }
        }
        assert_eq!(pos, 1);
        assert_eq!(neg, 2);
    }

    #[test]
    fn workload_matrix_examples() {
        // Relu on (4,2,2,2): consumes 32, produces 32.
        let node = relu("relu", 4, 2, 2, 2);
        let blk = unit_block(&node);
        let g = build_sdfg(&[blk], &[vec![Source::External]], 0, rat(8, 2)).unwrap();
        let w = workload_matrix(&g);
        assert_eq!(*w.w.get(0, 1), -32);
        assert_eq!(*w.w.get(1, 1), 32);
    }

    #[test]
    fn gap_workload_collapses_the_feature_map() {
        let c = 4u64;
        let gap = LayerNode {
            id: "gap".into(),
            inputs: vec![],
            sp_in: vec![TensorShape::new(c, 16, 16, 16)],
            sp_out: TensorShape::new(c, 1, 1, 1),
            params: LayerParams::GlobalAvgPool,
        };
        let blk = unit_block(&gap);
        let g = build_sdfg(&[blk], &[vec![Source::External]], 0, rat(1 << 14, 1)).unwrap();
        let w = workload_matrix(&g);
        assert_eq!(*w.w.get(0, 1), -(c as i128) * 4096);
        assert_eq!(*w.w.get(1, 1), c as i128);
    }

    #[test]
    fn broadcast_arcs_carry_channel_counts() {
        let main = TensorShape::new(8, 4, 4, 4);
        let vecs = TensorShape::new(8, 1, 1, 1);
        let r_main = relu("main", 8, 4, 4, 4);
        let gap = LayerNode {
            id: "gap".into(),
            inputs: vec!["main".into()],
            sp_in: vec![main],
            sp_out: vecs,
            params: LayerParams::GlobalAvgPool,
        };
        let mul = LayerNode {
            id: "mul".into(),
            inputs: vec!["main".into(), "gap".into()],
            sp_in: vec![main, vecs],
            sp_out: main,
            params: LayerParams::ElementWise(ElementWiseParams {
                t: ElementWiseOp::Mul,
                m: ElementWiseMode::Broadcast,
            }),
        };
        let blocks = vec![unit_block(&r_main), unit_block(&gap), unit_block(&mul)];
        let sources = vec![
            vec![Source::External],
            vec![Source::Member(0)],
            vec![Source::Member(0), Source::Member(1)],
        ];
        let g = build_sdfg(&blocks, &sources, 2, rat(1024, 1)).unwrap();
        let w = workload_matrix(&g);
        // mul consumes 512 on the main arc and 8 on the vector arc,
        // produces 512.
        let mul_col = 3;
        assert_eq!(*w.w.get(1, mul_col), -512);
        assert_eq!(*w.w.get(2, mul_col), -8);
        assert_eq!(*w.w.get(3, mul_col), 512);
    }

    #[test]
    fn ii_entries_and_max() {
        // Chain of rate-1 single-stream nodes over a 32-element tensor with
        // BW = 2: every defined II entry is 32.
        let a = relu("a", 4, 2, 2, 2);
        let mut b = relu("b", 4, 2, 2, 2);
        b.inputs = vec!["a".into()];
        let blocks = vec![unit_block(&a), unit_block(&b)];
        let sources = vec![vec![Source::External], vec![Source::Member(0)]];
        let g = build_sdfg(&blocks, &sources, 1, rat(2, 2)).unwrap();
        let w = workload_matrix(&g);
        let ii = initiation_intervals(&w, &g).unwrap();
        assert_eq!(ii.ii_max, rat(32, 1));
        // Sign cancellation: consumption entries are positive too.
        assert_eq!(*ii.ii.get(0, 1), rat(32, 1));
    }

    #[test]
    fn memory_bound_rates_scale_downstream() {
        // BW/2 = 1/2 word/cycle feeding a rate-1 single-stream relu: the
        // block runs at half rate and its Γ output entry halves, doubling II.
        let node = relu("relu", 4, 2, 2, 2);
        let blk = unit_block(&node);
        let g = build_sdfg(&[blk], &[vec![Source::External]], 0, rat(1, 2)).unwrap();
        assert_eq!(g.nodes[1].phi, rat(1, 2));
        assert_eq!(*g.gamma.get(1, 1), rat(1, 2));
        let w = workload_matrix(&g);
        let ii = initiation_intervals(&w, &g).unwrap();
        // W entry +32 over Γ entry +1/2 -> 64.
        assert_eq!(*ii.ii.get(1, 1), rat(64, 1));
        assert_eq!(ii.ii_max, rat(64, 1));
    }

    #[test]
    fn branch_buffers_cover_depth_differences() {
        // Identity path (one relu, depth 2) against a convolution path with
        // window depth 1000: the shallow side's terminal arc gets 998 words.
        let sp = TensorShape::new(1, 3, 98, 5);
        let mk_relu = |id: &str| LayerNode {
            id: id.into(),
            inputs: vec![],
            sp_in: vec![sp],
            sp_out: sp,
            params: LayerParams::Activation(ActivationParams { t: ActivationType::Relu }),
        };
        let conv = LayerNode {
            id: "conv".into(),
            inputs: vec![],
            sp_in: vec![sp],
            sp_out: sp,
            params: LayerParams::Conv3D(ConvParams {
                ks: [3, 3, 1],
                sr: [1, 1, 1],
                pad: [1, 1, 0],
                gp: 1,
            }),
        };
        let add = LayerNode {
            id: "add".into(),
            inputs: vec!["a".into(), "b".into()],
            sp_in: vec![sp, sp],
            sp_out: sp,
            params: LayerParams::ElementWise(ElementWiseParams {
                t: ElementWiseOp::Add,
                m: ElementWiseMode::Normal,
            }),
        };

        let blocks = vec![unit_block(&mk_relu("r1")), unit_block(&conv), unit_block(&add)];
        assert_eq!(blocks[0].depth, 2);
        assert_eq!(blocks[1].depth, 1000);
        let sources = vec![
            vec![Source::External],
            vec![Source::External],
            vec![Source::Member(0), Source::Member(1)],
        ];
        let mut g = build_sdfg(&blocks, &sources, 2, rat(2, 1)).unwrap();
        assign_branch_buffers(&mut g);
        // Arc 1 is the relu output (shallow side), arc 2 the conv output.
        assert_eq!(g.buffers[1], 998);
        assert_eq!(g.buffers[2], 0);
        assert_eq!(g.buffers[0], 0);

        // Symmetric branch: equal depths, no extra buffering anywhere.
        let blocks = vec![unit_block(&mk_relu("r1")), unit_block(&mk_relu("r2")), unit_block(&add)];
        let sources = vec![
            vec![Source::External],
            vec![Source::External],
            vec![Source::Member(0), Source::Member(1)],
        ];
        let mut g = build_sdfg(&blocks, &sources, 2, rat(2, 1)).unwrap();
        assign_branch_buffers(&mut g);
        assert_eq!(g.buffers, vec![0, 0, 0, 0]);
    }

    #[test]
    fn chains_reduce_to_upper_bidiagonal() {
        let mut nodes = Vec::new();
        for i in 0..4 {
            let mut n = relu(&format!("n{i}"), 2, 2, 2, 2);
            if i > 0 {
                n.inputs = vec![format!("n{}", i - 1)];
            }
            nodes.push(n);
        }
        let blocks: Vec<HardwareBlock> = nodes.iter().map(unit_block).collect();
        let sources: Vec<Vec<Source>> = (0..4)
            .map(|i| if i == 0 { vec![Source::External] } else { vec![Source::Member(i - 1)] })
            .collect();
        let g = build_sdfg(&blocks, &sources, 3, rat(4, 2)).unwrap();
        for a in 0..g.arcs.len() {
            for c in 0..g.nodes.len() {
                let v = *g.gamma.get(a, c);
                if c == a {
                    assert!(v.is_positive());
                } else if c == a + 1 {
                    assert!(v.is_negative());
                } else {
                    assert!(v.is_zero(), "unexpected entry at ({a},{c})");
                }
            }
        }
    }

    #[test]
    fn dump_is_labeled_csv() {
        let node = relu("relu", 2, 2, 2, 2);
        let blk = unit_block(&node);
        let g = build_sdfg(&[blk], &[vec![Source::External]], 0, rat(4, 2)).unwrap();
        let w = workload_matrix(&g);
        let ii = initiation_intervals(&w, &g).unwrap();
        let dump = dump_matrices(&g, &w, &ii);
        assert_eq!(dump.len(), 5);
        let gamma = &dump[0].1;
        assert!(gamma.starts_with("arc,MemIn,relu,MemOut\n"));
        assert!(gamma.contains("in,2,-1,0"));
    }
}
