//! Synthetic models, partitions and tensors for validation runs and benches.
//!
//! Everything here is seeded and deterministic. Shapes stay at desk scale
//! (channels <= 16, spatial extents <= 8) so cycle-level simulations finish
//! quickly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hwblocks::{feasible_configs, ParallelismConfig};
use crate::model::{
    ActivationType, ConvParams, ElementWiseMode, ElementWiseOp, LayerNode, LayerParams,
    ModelGraph, TensorShape,
};
use crate::partition::{partition_model, Partition, PartitionKind};

fn act(id: &str, input: Option<&str>, sp: TensorShape, t: ActivationType) -> LayerNode {
    LayerNode {
        id: id.into(),
        inputs: input.map(|s| vec![s.to_string()]).unwrap_or_default(),
        sp_in: vec![sp],
        sp_out: sp,
        params: LayerParams::Activation(crate::model::ActivationParams { t }),
    }
}

fn conv(
    id: &str,
    input: Option<&str>,
    sp_in: TensorShape,
    c_out: u64,
    ks: [u64; 3],
    sr: [u64; 3],
    pad: [u64; 3],
    gp: u64,
) -> LayerNode {
    let p = ConvParams { ks, sr, pad, gp };
    let sp_out = crate::model::conv_output_shape(&sp_in, &p, c_out).expect("synth conv shape");
    LayerNode {
        id: id.into(),
        inputs: input.map(|s| vec![s.to_string()]).unwrap_or_default(),
        sp_in: vec![sp_in],
        sp_out,
        params: LayerParams::Conv3D(p),
    }
}

fn eltwise(
    id: &str,
    inputs: [&str; 2],
    sp_in: Vec<TensorShape>,
    sp_out: TensorShape,
    t: ElementWiseOp,
    m: ElementWiseMode,
) -> LayerNode {
    LayerNode {
        id: id.into(),
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
        sp_in,
        sp_out,
        params: LayerParams::ElementWise(crate::model::ElementWiseParams { t, m }),
    }
}

fn gap(id: &str, input: &str, sp_in: TensorShape) -> LayerNode {
    LayerNode {
        id: id.into(),
        inputs: vec![input.to_string()],
        sp_in: vec![sp_in],
        sp_out: TensorShape::new(sp_in.c, 1, 1, 1),
        params: LayerParams::GlobalAvgPool,
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.gen_range(0..xs.len())]
}

/// Random linear chain of 2..=5 layers (activations, pointwise and
/// depth-wise convolutions) at desk scale.
pub fn linear_chain_model(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0 = pick(&mut rng, &[2u64, 4, 8, 16]);
    let d = pick(&mut rng, &[2u64, 4]);
    let h = pick(&mut rng, &[4u64, 8]);
    let w = pick(&mut rng, &[4u64, 8]);
    let mut sp = TensorShape::new(c0, d, h, w);
    let mut nodes: Vec<LayerNode> = Vec::new();
    let len = rng.gen_range(2..=5);
    let mut prev: Option<String> = None;
    for i in 0..len {
        let id = format!("l{i}");
        let node = match rng.gen_range(0..3) {
            0 => act(
                &id,
                prev.as_deref(),
                sp,
                pick(&mut rng, &[ActivationType::Relu, ActivationType::Swish]),
            ),
            1 => {
                let c_out = pick(&mut rng, &[2u64, 4, 8, 16]);
                conv(&id, prev.as_deref(), sp, c_out, [1, 1, 1], [1, 1, 1], [0, 0, 0], 1)
            }
            _ => conv(&id, prev.as_deref(), sp, sp.c, [3, 3, 3], [1, 1, 1], [1, 1, 1], sp.c),
        };
        sp = node.sp_out;
        prev = Some(id);
        nodes.push(node);
    }
    ModelGraph::new(format!("chain{seed}"), nodes, None, None).expect("synth chain")
}

/// A prologue activation plus one residual block of the requested kind at
/// desk scale. Partitioning the result yields exactly one typed partition.
pub fn typed_block_model(kind: PartitionKind, seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_in = pick(&mut rng, &[4u64, 8]);
    let c_out = if kind == PartitionKind::Type1 {
        // Channel change forces the projection on the skip path.
        if c_in == 4 { 8 } else { 4 }
    } else {
        c_in
    };
    let inner = pick(&mut rng, &[6u64, 8, 12]);
    let se_w = pick(&mut rng, &[2u64, 4]);
    let d = pick(&mut rng, &[2u64, 4]);
    let hw = pick(&mut rng, &[4u64, 8]);
    let sp0 = TensorShape::new(c_in, d, hw, hw);

    let mut nodes = vec![act("pre", None, sp0, ActivationType::Relu)];
    let conv_a = conv("conv_a", Some("pre"), sp0, inner, [1, 1, 1], [1, 1, 1], [0, 0, 0], 1);
    let sp_b_in = conv_a.sp_out;
    nodes.push(conv_a);
    let conv_b =
        conv("conv_b", Some("conv_a"), sp_b_in, inner, [3, 3, 3], [1, 1, 1], [1, 1, 1], inner);
    let sp_main = conv_b.sp_out;
    nodes.push(conv_b);

    let main_id = if kind == PartitionKind::Type3 {
        "conv_b".to_string()
    } else {
        nodes.push(gap("se_gap", "conv_b", sp_main));
        let sp_gap = TensorShape::new(inner, 1, 1, 1);
        nodes.push(conv("se_fc1", Some("se_gap"), sp_gap, se_w, [1, 1, 1], [1, 1, 1], [0, 0, 0], 1));
        let sp_fc1 = TensorShape::new(se_w, 1, 1, 1);
        nodes.push(conv("se_fc2", Some("se_fc1"), sp_fc1, inner, [1, 1, 1], [1, 1, 1], [0, 0, 0], 1));
        nodes.push(act("se_sigmoid", Some("se_fc2"), sp_gap, ActivationType::Sigmoid));
        nodes.push(eltwise(
            "se_mul",
            ["conv_b", "se_sigmoid"],
            vec![sp_main, sp_gap],
            sp_main,
            ElementWiseOp::Mul,
            ElementWiseMode::Broadcast,
        ));
        "se_mul".to_string()
    };

    nodes.push(act("swish", Some(&main_id), sp_main, ActivationType::Swish));
    let conv_c = conv("conv_c", Some("swish"), sp_main, c_out, [1, 1, 1], [1, 1, 1], [0, 0, 0], 1);
    let sp_out = conv_c.sp_out;
    nodes.push(conv_c);

    let skip_id = if kind == PartitionKind::Type1 {
        nodes.push(conv("proj", Some("pre"), sp0, c_out, [1, 1, 1], [1, 1, 1], [0, 0, 0], 1));
        "proj"
    } else {
        "pre"
    };
    nodes.push(eltwise(
        "add",
        [skip_id, "conv_c"],
        vec![sp_out, sp_out],
        sp_out,
        ElementWiseOp::Add,
        ElementWiseMode::Normal,
    ));
    nodes.push(act("out", Some("add"), sp_out, ActivationType::Relu));

    ModelGraph::new(format!("{kind}_{seed}"), nodes, None, None).expect("synth block")
}

/// A squeeze-and-excitation shaped block with no convolutions anywhere
/// before the pool, so token payloads survive to the pool intact:
/// `pre -> {mul, gap -> sigmoid -> mul, add}; mul -> add -> out`.
pub fn se_payload_model(c: u64, d: u64, h: u64, w: u64) -> ModelGraph {
    let sp = TensorShape::new(c, d, h, w);
    let spv = TensorShape::new(c, 1, 1, 1);
    let nodes = vec![
        act("pre", None, sp, ActivationType::Relu),
        gap("se_gap", "pre", sp),
        act("se_sigmoid", Some("se_gap"), spv, ActivationType::Sigmoid),
        eltwise(
            "se_mul",
            ["pre", "se_sigmoid"],
            vec![sp, spv],
            sp,
            ElementWiseOp::Mul,
            ElementWiseMode::Broadcast,
        ),
        eltwise(
            "add",
            ["pre", "se_mul"],
            vec![sp, sp],
            sp,
            ElementWiseOp::Add,
            ElementWiseMode::Normal,
        ),
        act("out", Some("add"), sp, ActivationType::Relu),
    ];
    ModelGraph::new(format!("se_payload_{c}x{d}x{h}x{w}"), nodes, None, None)
        .expect("synth payload block")
}

/// The typed partition of a single-block model (plus its graph).
pub fn typed_partition(g: &ModelGraph) -> (Vec<Partition>, usize) {
    let parts = partition_model(g).expect("synth model partitions");
    let idx = parts
        .iter()
        .position(|p| p.kind != PartitionKind::Residual)
        .expect("one typed partition");
    (parts, idx)
}

/// Uniformly random feasible configuration per layer of a partition.
pub fn random_configs(
    view: &crate::partition::PartitionView,
    rng: &mut ChaCha8Rng,
) -> Vec<ParallelismConfig> {
    (0..view.len())
        .map(|pos| {
            let set = feasible_configs(view.node(pos));
            set[rng.gen_range(0..set.len())]
        })
        .collect()
}

/// Seeded standard-normal samples scaled by `sigma` (Box-Muller).
pub fn gaussian_tensor(seed: u64, n: usize, sigma: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(sigma * r * theta.cos());
        if out.len() < n {
            out.push(sigma * r * theta.sin());
        }
    }
    out
}

/// Seeded uniform samples in `[lo, hi)`.
pub fn uniform_tensor(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_graph;

    #[test]
    fn typed_blocks_classify_as_requested() {
        for kind in [PartitionKind::Type1, PartitionKind::Type2, PartitionKind::Type3] {
            for seed in 0..8 {
                let g = typed_block_model(kind, seed);
                assert!(validate_graph(&g).is_empty(), "{kind} seed {seed}");
                let (parts, idx) = typed_partition(&g);
                assert_eq!(parts[idx].kind, kind, "seed {seed}");
            }
        }
    }

    #[test]
    fn chains_are_well_formed_and_single_partition() {
        for seed in 0..16 {
            let g = linear_chain_model(seed);
            assert!(validate_graph(&g).is_empty(), "seed {seed}");
            let parts = partition_model(&g).unwrap();
            assert_eq!(parts.len(), 1);
            assert_eq!(parts[0].kind, PartitionKind::Residual);
        }
    }

    #[test]
    fn payload_block_is_type2_shaped() {
        let g = se_payload_model(4, 2, 2, 2);
        assert!(validate_graph(&g).is_empty());
        let (parts, idx) = typed_partition(&g);
        assert_eq!(parts[idx].kind, PartitionKind::Type2);
    }

    #[test]
    fn gaussian_tensor_is_seeded() {
        let a = gaussian_tensor(3, 100, 1.0);
        let b = gaussian_tensor(3, 100, 1.0);
        assert_eq!(a, b);
        let mean: f64 = a.iter().sum::<f64>() / 100.0;
        assert!(mean.abs() < 0.5);
    }
}
