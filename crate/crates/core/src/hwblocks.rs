//! Layers bound to streaming hardware building blocks.
//!
//! A [`HardwareBlock`] is a layer plus a [`ParallelismConfig`]: `s_in`/`s_out`
//! parallel streams at the block boundaries (coarse parallelism over
//! channels/filters) and, for convolutions, `p_mac` parallel multiply-
//! accumulate units inside the dot product (fine parallelism). From those the
//! block's cycle count, normalized per-stream rates, pipeline-fill depth and
//! resource estimate are derived.
//!
//! Cycle model (exact rational arithmetic, ceiling applied once at the end):
//!
//! * standard / pointwise convolution: `out_voxels * (C_in/s_in) * (C_out/s_out) * (K_vol/p_mac)`
//! * depth-wise convolution: `out_voxels * (C_in/s_in) * (K_vol/p_mac)`
//! * grouped convolution: `out_voxels * (C_in/(gp*s_in)) * (C_out/s_out) * gp * (K_vol/p_mac)`
//! * activation / element-wise / global pool: `workload_in / s_in`
//!
//! and never below `workload_in/s_in` or `workload_out/s_out`, since a block
//! cannot move more than one word per stream per cycle. Rates follow as
//! `r_in = workload_in/(s_in*cycles)` and `r_out = workload_out/(s_out*cycles)`,
//! which keeps them in (0,1] by construction.

use num_traits::Signed;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivationType, ElementWiseMode, ElementWiseOp, LayerNode, LayerParams};
use crate::Rat;

/// How the global-average-pool block is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapMode {
    /// Emit only after the full feature map has been reduced.
    Exact,
    /// Forward the previous batch item's result immediately while
    /// accumulating the current one.
    PriorBatch,
}

impl std::str::FromStr for GapMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(GapMode::Exact),
            "prior" | "priorbatch" | "prior-batch" => Ok(GapMode::PriorBatch),
            other => Err(format!("unknown gap mode `{other}` (expected exact|prior)")),
        }
    }
}

/// Resource-model constants. Loaded from a calibration file at startup;
/// the defaults below ship with the tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Calibration {
    pub lut_per_stream: u64,
    pub lut_per_dsp: u64,
    pub ff_per_stream: u64,
    pub ff_per_dsp: u64,
    /// 16-bit words per BRAM18K block.
    pub bram_words: u64,
    /// DSPs per stream for sigmoid/swish/multiply/pool datapaths.
    pub dsp_nonlinear: u64,
    pub activation_depth: u64,
    pub elementwise_depth: u64,
    pub gap_prior_depth: u64,
    /// Per-stream FIFO depth (words) on arcs without extra branch buffering.
    pub fifo_default_words: u64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            lut_per_stream: 300,
            lut_per_dsp: 50,
            ff_per_stream: 400,
            ff_per_dsp: 60,
            bram_words: 1024,
            dsp_nonlinear: 2,
            activation_depth: 2,
            elementwise_depth: 2,
            gap_prior_depth: 2,
            fifo_default_words: 2,
        }
    }
}

impl Calibration {
    pub fn load_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Parallelism configuration of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParallelismConfig {
    pub s_in: u64,
    pub s_out: u64,
    pub p_mac: u64,
}

impl ParallelismConfig {
    pub fn unit() -> Self {
        Self { s_in: 1, s_out: 1, p_mac: 1 }
    }
}

/// FPGA resource estimate. Additive: the estimate of a set of blocks is the
/// component-wise sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub dsp: u64,
    pub bram18k: u64,
    pub lut: u64,
    pub ff: u64,
}

impl ResourceEstimate {
    pub fn add(&self, other: &ResourceEstimate) -> ResourceEstimate {
        ResourceEstimate {
            dsp: self.dsp + other.dsp,
            bram18k: self.bram18k + other.bram18k,
            lut: self.lut + other.lut,
            ff: self.ff + other.ff,
        }
    }

    /// Component-wise `<=` against a capacity vector.
    pub fn fits(&self, dsp: u64, bram18k: u64, lut: u64, ff: u64) -> bool {
        self.dsp <= dsp && self.bram18k <= bram18k && self.lut <= lut && self.ff <= ff
    }
}

impl std::iter::Sum for ResourceEstimate {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ResourceEstimate::default(), |a, b| a.add(&b))
    }
}

/// Behavioural class of a block, consumed by the SDF builder and the
/// cycle-level simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOp {
    Conv,
    Act(ActivationType),
    EltwiseNormal(ElementWiseOp),
    /// Second input is a per-channel vector reused across the feature map.
    EltwiseBroadcast(ElementWiseOp),
    Gap(GapMode),
}

/// A layer bound to a parallelism configuration, with derived rates, cycle
/// count, pipeline depth and resources.
#[derive(Debug, Clone, PartialEq)]
pub struct HardwareBlock {
    pub id: String,
    pub op: BlockOp,
    pub cfg: ParallelismConfig,
    /// Elements consumed per batch item, one entry per input.
    pub w_in: Vec<u64>,
    /// Elements produced per batch item.
    pub w_out: u64,
    /// Normalized per-stream consumption rate per input, in (0,1].
    pub r_in: Vec<Rat>,
    /// Normalized per-stream production rate, in (0,1].
    pub r_out: Rat,
    /// Cycles to consume one batch item's workload.
    pub cycles: u64,
    /// Pipeline-fill cycles.
    pub depth: u64,
    /// Internal element storage (window/accumulator/skid registers); bounds
    /// how far consumption may run ahead of production in the simulator.
    pub store: u64,
    pub rsc: ResourceEstimate,
}

/// Ascending list of divisors of `n`.
pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            small.push(d);
            if d != n / d {
                large.push(n / d);
            }
        }
        d += 1;
    }
    large.reverse();
    small.extend(large);
    small
}

/// Which configuration fields the DSE may vary for a given layer.
pub fn tunables(node: &LayerNode) -> Vec<Tunable> {
    match &node.params {
        LayerParams::Conv3D(p) if p.is_depthwise(node.c_in()) => vec![Tunable::SIn, Tunable::PMac],
        LayerParams::Conv3D(_) => vec![Tunable::SIn, Tunable::SOut, Tunable::PMac],
        _ => vec![Tunable::SIn],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tunable {
    SIn,
    SOut,
    PMac,
}

/// The exact feasible configuration set of a layer: divisors of the channel
/// counts (and of the kernel volume for convolutions), with depth-wise
/// convolutions tying `s_out` to `s_in` and non-convolution layers tying both
/// streams together with `p_mac` fixed at 1.
pub fn feasible_configs(node: &LayerNode) -> Vec<ParallelismConfig> {
    match &node.params {
        LayerParams::Conv3D(p) if p.is_depthwise(node.c_in()) => {
            let mut out = Vec::new();
            for &s in &divisors(node.c_in()) {
                for &pm in &divisors(p.kernel_volume()) {
                    out.push(ParallelismConfig { s_in: s, s_out: s, p_mac: pm });
                }
            }
            out
        }
        LayerParams::Conv3D(p) => {
            let mut out = Vec::new();
            for &si in &divisors(node.c_in()) {
                for &so in &divisors(node.c_out()) {
                    for &pm in &divisors(p.kernel_volume()) {
                        out.push(ParallelismConfig { s_in: si, s_out: so, p_mac: pm });
                    }
                }
            }
            out
        }
        _ => divisors(node.c_in())
            .into_iter()
            .map(|s| ParallelismConfig { s_in: s, s_out: s, p_mac: 1 })
            .collect(),
    }
}

/// Number of feasible configurations without materializing them.
pub fn config_count(node: &LayerNode) -> u128 {
    match &node.params {
        LayerParams::Conv3D(p) if p.is_depthwise(node.c_in()) => {
            divisors(node.c_in()).len() as u128 * divisors(p.kernel_volume()).len() as u128
        }
        LayerParams::Conv3D(p) => {
            divisors(node.c_in()).len() as u128
                * divisors(node.c_out()).len() as u128
                * divisors(p.kernel_volume()).len() as u128
        }
        _ => divisors(node.c_in()).len() as u128,
    }
}

/// Equalizes the two input rates of an element-wise block to the lower of
/// the pair, the behaviour of the merge datapath when one side is slower.
pub fn equalize_elementwise(r_in1: Rat, r_in2: Rat) -> (Rat, Rat) {
    let low = r_in1.min(r_in2);
    (low, low)
}

fn config_err(parameter: &str, value: u64, message: String) -> Error {
    Error::Config { parameter: parameter.to_string(), value, message }
}

fn check_divides(parameter: &str, value: u64, total: u64, what: &str, id: &str) -> Result<()> {
    if value == 0 || total % value != 0 {
        return Err(config_err(
            parameter,
            value,
            format!("must divide {what} ({total}) for block `{id}`"),
        ));
    }
    Ok(())
}

fn ceil_log2(x: u64) -> u64 {
    let x = x.max(2);
    64 - (x - 1).leading_zeros() as u64
}

fn rat_u(n: u64) -> Rat {
    Rat::from_integer(n as i128)
}

fn ceil_to_u64(r: Rat) -> u64 {
    debug_assert!(r.is_positive());
    r.ceil().to_integer() as u64
}

/// Binds `node` to `cfg`, deriving rates, cycles, depth and resources.
pub fn build_block(
    node: &LayerNode,
    cfg: &ParallelismConfig,
    calib: &Calibration,
    gap_mode: GapMode,
) -> Result<HardwareBlock> {
    let c_in = node.c_in();
    let c_out = node.c_out();
    check_divides("s_in", cfg.s_in, c_in, "input channels", &node.id)?;

    let w_in: Vec<u64> = node.sp_in.iter().map(|s| s.volume()).collect();
    let w_out = node.sp_out.volume();

    let (op, cycles, depth, store, rsc) = match &node.params {
        LayerParams::Conv3D(p) => {
            check_divides("s_out", cfg.s_out, c_out, "output channels", &node.id)?;
            check_divides("p_mac", cfg.p_mac, p.kernel_volume(), "kernel volume", &node.id)?;
            let depthwise = p.is_depthwise(c_in);
            if depthwise && cfg.s_out != cfg.s_in {
                return Err(config_err(
                    "s_out",
                    cfg.s_out,
                    format!("depth-wise block `{}` ties s_out to s_in ({})", node.id, cfg.s_in),
                ));
            }
            let out_vox = rat_u(node.sp_out.spatial_volume());
            let k_term = rat_u(p.kernel_volume()) / rat_u(cfg.p_mac);
            let mac_cycles = if depthwise {
                out_vox * (rat_u(c_in) / rat_u(cfg.s_in)) * k_term
            } else if p.gp == 1 {
                out_vox
                    * (rat_u(c_in) / rat_u(cfg.s_in))
                    * (rat_u(c_out) / rat_u(cfg.s_out))
                    * k_term
            } else {
                out_vox
                    * (rat_u(c_in) / (rat_u(p.gp) * rat_u(cfg.s_in)))
                    * (rat_u(c_out) / rat_u(cfg.s_out))
                    * rat_u(p.gp)
                    * k_term
            };
            let io_floor = (w_in[0] + cfg.s_in - 1) / cfg.s_in;
            let out_floor = (w_out + cfg.s_out - 1) / cfg.s_out;
            let cycles = ceil_to_u64(mac_cycles).max(io_floor).max(out_floor);

            // Sliding-window fill plus adder tree and MAC accumulation.
            let [kd, kh, kw] = p.ks;
            let sp = node.sp_in[0];
            let window_fill = (c_in / cfg.s_in) * ((kd - 1) * sp.h * sp.w + (kh - 1) * sp.w + (kw - 1));
            let depth = window_fill + ceil_log2(cfg.p_mac) + p.kernel_volume() / cfg.p_mac;

            let dsp = if depthwise {
                cfg.s_in * cfg.p_mac
            } else {
                cfg.s_in * cfg.s_out * cfg.p_mac
            };
            let window_words = c_in * ((kd - 1) * sp.h * sp.w + (kh - 1) * sp.w + kw);
            let streams = cfg.s_in + cfg.s_out;
            let rsc = ResourceEstimate {
                dsp,
                bram18k: window_words.div_ceil(calib.bram_words),
                lut: calib.lut_per_stream * streams + calib.lut_per_dsp * dsp,
                ff: calib.ff_per_stream * streams + calib.ff_per_dsp * dsp,
            };
            (BlockOp::Conv, cycles, depth, window_words + 2 * cfg.s_in, rsc)
        }
        LayerParams::Activation(a) => {
            require_unit_non_conv(node, cfg)?;
            let cycles = w_in[0].div_ceil(cfg.s_in);
            let nonlinear = !matches!(a.t, ActivationType::Relu);
            let dsp = if nonlinear { cfg.s_in * calib.dsp_nonlinear } else { 0 };
            let rsc = stream_rsc(calib, cfg.s_in + cfg.s_out, dsp, 0);
            (BlockOp::Act(a.t), cycles, calib.activation_depth, 2 * cfg.s_in, rsc)
        }
        LayerParams::ElementWise(e) => {
            require_unit_non_conv(node, cfg)?;
            let cycles = w_in[0].div_ceil(cfg.s_in);
            let dsp = match e.t {
                ElementWiseOp::Add => 0,
                ElementWiseOp::Mul => cfg.s_in * calib.dsp_nonlinear,
            };
            let streams = cfg.s_in * node.sp_in.len() as u64 + cfg.s_out;
            let rsc = stream_rsc(calib, streams, dsp, 0);
            let op = match e.m {
                ElementWiseMode::Normal => BlockOp::EltwiseNormal(e.t),
                ElementWiseMode::Broadcast => BlockOp::EltwiseBroadcast(e.t),
            };
            (op, cycles, calib.elementwise_depth, 2 * cfg.s_in, rsc)
        }
        LayerParams::GlobalAvgPool => {
            require_unit_non_conv(node, cfg)?;
            let cycles = w_in[0].div_ceil(cfg.s_in);
            let depth = match gap_mode {
                GapMode::Exact => cycles,
                GapMode::PriorBatch => calib.gap_prior_depth,
            };
            let dsp = cfg.s_in * calib.dsp_nonlinear;
            let accum_bram = c_in.div_ceil(calib.bram_words);
            let rsc = stream_rsc(calib, cfg.s_in + cfg.s_out, dsp, accum_bram);
            (BlockOp::Gap(gap_mode), cycles, depth, w_in[0] + 2 * cfg.s_in, rsc)
        }
    };

    let mut r_in = Vec::with_capacity(w_in.len());
    for &w in &w_in {
        let r = rat_u(w) / (rat_u(cfg.s_in) * rat_u(cycles));
        r_in.push(r.min(Rat::from_integer(1)));
    }
    let r_out = (rat_u(w_out) / (rat_u(cfg.s_out) * rat_u(cycles))).min(Rat::from_integer(1));

    Ok(HardwareBlock {
        id: node.id.clone(),
        op,
        cfg: *cfg,
        w_in,
        w_out,
        r_in,
        r_out,
        cycles,
        depth,
        store,
        rsc,
    })
}

fn require_unit_non_conv(node: &LayerNode, cfg: &ParallelismConfig) -> Result<()> {
    if cfg.p_mac != 1 {
        return Err(config_err(
            "p_mac",
            cfg.p_mac,
            format!("non-convolution block `{}` requires p_mac = 1", node.id),
        ));
    }
    if cfg.s_out != cfg.s_in {
        return Err(config_err(
            "s_out",
            cfg.s_out,
            format!("non-convolution block `{}` ties s_out to s_in ({})", node.id, cfg.s_in),
        ));
    }
    Ok(())
}

fn stream_rsc(calib: &Calibration, streams: u64, dsp: u64, bram18k: u64) -> ResourceEstimate {
    ResourceEstimate {
        dsp,
        bram18k,
        lut: calib.lut_per_stream * streams + calib.lut_per_dsp * dsp,
        ff: calib.ff_per_stream * streams + calib.ff_per_dsp * dsp,
    }
}
