//! Programmatic builders for the bundled network descriptions.
//!
//! The X3D-M description shipped under `data/x3d_m.json` is generated from
//! [`x3d_m`] (see `examples/generate_data.rs`), which reconstructs the
//! published architecture: an orthogonal space/time stem, four residual
//! stages of inverted-bottleneck blocks (3/5/11/7 blocks at widths
//! 24/48/96/192, inner expansion 2.25x), squeeze-and-excitation on every
//! even-indexed block, and a pooled classifier head. Batch norms are folded
//! into the preceding convolutions and per-convolution activations are
//! treated as fused, so the graph carries 244 layers.

use crate::model::{
    ActivationParams, ActivationType, ConvParams, ElementWiseMode, ElementWiseOp,
    ElementWiseParams, LayerNode, LayerParams, ModelGraph, TensorShape,
};

struct Builder {
    nodes: Vec<LayerNode>,
}

impl Builder {
    fn push(&mut self, node: LayerNode) -> String {
        let id = node.id.clone();
        self.nodes.push(node);
        id
    }

    fn conv(
        &mut self,
        id: &str,
        input: Option<&str>,
        sp_in: TensorShape,
        c_out: u64,
        ks: [u64; 3],
        sr: [u64; 3],
        pad: [u64; 3],
        gp: u64,
    ) -> (String, TensorShape) {
        let p = ConvParams { ks, sr, pad, gp };
        let sp_out = crate::model::conv_output_shape(&sp_in, &p, c_out).expect("zoo conv shape");
        let id = self.push(LayerNode {
            id: id.to_string(),
            inputs: input.map(|s| vec![s.to_string()]).unwrap_or_default(),
            sp_in: vec![sp_in],
            sp_out,
            params: LayerParams::Conv3D(p),
        });
        (id, sp_out)
    }

    fn act(&mut self, id: &str, input: &str, sp: TensorShape, t: ActivationType) -> String {
        self.push(LayerNode {
            id: id.to_string(),
            inputs: vec![input.to_string()],
            sp_in: vec![sp],
            sp_out: sp,
            params: LayerParams::Activation(ActivationParams { t }),
        })
    }

    fn gap(&mut self, id: &str, input: &str, sp_in: TensorShape) -> (String, TensorShape) {
        let sp_out = TensorShape::new(sp_in.c, 1, 1, 1);
        let id = self.push(LayerNode {
            id: id.to_string(),
            inputs: vec![input.to_string()],
            sp_in: vec![sp_in],
            sp_out,
            params: LayerParams::GlobalAvgPool,
        });
        (id, sp_out)
    }

    fn eltwise(
        &mut self,
        id: &str,
        inputs: [&str; 2],
        sp_in: Vec<TensorShape>,
        sp_out: TensorShape,
        t: ElementWiseOp,
        m: ElementWiseMode,
    ) -> String {
        self.push(LayerNode {
            id: id.to_string(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            sp_in,
            sp_out,
            params: LayerParams::ElementWise(ElementWiseParams { t, m }),
        })
    }
}

/// Squeeze-and-excitation bottleneck width: fraction 1/16 of the expanded
/// width, rounded to a multiple of 8 with a floor of 8.
fn se_width(inner: u64) -> u64 {
    let scaled = inner as f64 * 0.0625 + 4.0;
    ((scaled as u64) / 8 * 8).max(8)
}

/// One inverted-bottleneck residual block. Returns the output node id and
/// shape. `downsample` adds spatial stride 2 (and a projection convolution
/// on the skip path, which is also required whenever channels change).
#[allow(clippy::too_many_arguments)]
fn block(
    b: &mut Builder,
    prefix: &str,
    input: &str,
    sp_in: TensorShape,
    c_out: u64,
    inner: u64,
    use_se: bool,
    downsample: bool,
) -> (String, TensorShape) {
    let stride = if downsample { 2 } else { 1 };
    let (conv_a, sp_a) = b.conv(
        &format!("{prefix}_conv_a"),
        Some(input),
        sp_in,
        inner,
        [1, 1, 1],
        [1, 1, 1],
        [0, 0, 0],
        1,
    );
    let (conv_b, sp_b) = b.conv(
        &format!("{prefix}_conv_b"),
        Some(&conv_a),
        sp_a,
        inner,
        [3, 3, 3],
        [1, stride, stride],
        [1, 1, 1],
        inner,
    );

    let main = if use_se {
        let (gap, sp_gap) = b.gap(&format!("{prefix}_se_gap"), &conv_b, sp_b);
        let se_w = se_width(inner);
        let (fc1, sp_fc1) = b.conv(
            &format!("{prefix}_se_fc1"),
            Some(&gap),
            sp_gap,
            se_w,
            [1, 1, 1],
            [1, 1, 1],
            [0, 0, 0],
            1,
        );
        let (fc2, sp_fc2) = b.conv(
            &format!("{prefix}_se_fc2"),
            Some(&fc1),
            sp_fc1,
            inner,
            [1, 1, 1],
            [1, 1, 1],
            [0, 0, 0],
            1,
        );
        let sigmoid = b.act(&format!("{prefix}_se_sigmoid"), &fc2, sp_fc2, ActivationType::Sigmoid);
        b.eltwise(
            &format!("{prefix}_se_mul"),
            [&conv_b, &sigmoid],
            vec![sp_b, sp_fc2],
            sp_b,
            ElementWiseOp::Mul,
            ElementWiseMode::Broadcast,
        )
    } else {
        conv_b
    };

    let swish = b.act(&format!("{prefix}_swish"), &main, sp_b, ActivationType::Swish);
    let (conv_c, sp_c) = b.conv(
        &format!("{prefix}_conv_c"),
        Some(&swish),
        sp_b,
        c_out,
        [1, 1, 1],
        [1, 1, 1],
        [0, 0, 0],
        1,
    );

    let skip = if downsample || sp_in.c != c_out {
        let (proj, sp_proj) = b.conv(
            &format!("{prefix}_proj"),
            Some(input),
            sp_in,
            c_out,
            [1, 1, 1],
            [1, stride, stride],
            [0, 0, 0],
            1,
        );
        debug_assert_eq!(sp_proj, sp_c);
        proj
    } else {
        input.to_string()
    };

    let add = b.eltwise(
        &format!("{prefix}_add"),
        [&skip, &conv_c],
        vec![sp_c, sp_c],
        sp_c,
        ElementWiseOp::Add,
        ElementWiseMode::Normal,
    );
    let relu = b.act(&format!("{prefix}_relu"), &add, sp_c, ActivationType::Relu);
    (relu, sp_c)
}

/// The X3D-M description: 16-frame 256x256 RGB clips, 244 layers, 26
/// residual blocks across four stages, 400-way classifier.
pub fn x3d_m() -> ModelGraph {
    let mut b = Builder { nodes: Vec::new() };
    let input_shape = TensorShape::new(3, 16, 256, 256);

    // Stem: spatial 1x3x3 conv followed by a temporal depth-wise 5x1x1 conv.
    let (conv_xy, sp) = b.conv(
        "stem_conv_xy",
        None,
        input_shape,
        24,
        [1, 3, 3],
        [1, 2, 2],
        [0, 1, 1],
        1,
    );
    let (conv_t, sp) = b.conv(
        "stem_conv_t",
        Some(&conv_xy),
        sp,
        24,
        [5, 1, 1],
        [1, 1, 1],
        [2, 0, 0],
        24,
    );
    let mut cur = b.act("stem_relu", &conv_t, sp, ActivationType::Relu);
    let mut cur_sp = sp;

    // (stage name, block count, output width). Inner width is 2.25x the
    // output width; squeeze-and-excitation on even-indexed blocks; the first
    // block of each stage downsamples spatially.
    let stages: [(&str, usize, u64); 4] =
        [("res2", 3, 24), ("res3", 5, 48), ("res4", 11, 96), ("res5", 7, 192)];
    for (stage, blocks, c_out) in stages {
        let inner = c_out * 9 / 4;
        for i in 0..blocks {
            let prefix = format!("{stage}_b{i}");
            let (out, sp_out) = block(
                &mut b,
                &prefix,
                &cur,
                cur_sp,
                c_out,
                inner,
                i % 2 == 0,
                i == 0,
            );
            cur = out;
            cur_sp = sp_out;
        }
    }

    // Head: expansion conv, global pool, two pointwise "fully connected"
    // stages, 400-way output.
    let (conv5, sp5) = b.conv(
        "head_conv5",
        Some(&cur),
        cur_sp,
        432,
        [1, 1, 1],
        [1, 1, 1],
        [0, 0, 0],
        1,
    );
    let relu5 = b.act("head_relu5", &conv5, sp5, ActivationType::Relu);
    let (gap, sp_gap) = b.gap("head_gap", &relu5, sp5);
    let (fc1, sp_fc1) = b.conv(
        "head_fc1",
        Some(&gap),
        sp_gap,
        2048,
        [1, 1, 1],
        [1, 1, 1],
        [0, 0, 0],
        1,
    );
    let fc1_relu = b.act("head_fc1_relu", &fc1, sp_fc1, ActivationType::Relu);
    let (_fc2, _) = b.conv(
        "head_fc2",
        Some(&fc1_relu),
        sp_fc1,
        400,
        [1, 1, 1],
        [1, 1, 1],
        [0, 0, 0],
        1,
    );

    ModelGraph::new("x3d_m".to_string(), b.nodes, Some(6.4), Some(6.2))
        .expect("bundled x3d_m description is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_model, to_json, validate_graph};

    #[test]
    fn x3d_m_has_244_layers() {
        let g = x3d_m();
        assert_eq!(g.len(), 244);
    }

    #[test]
    fn x3d_m_is_well_formed() {
        let g = x3d_m();
        let report = validate_graph(&g);
        assert!(report.is_empty(), "violations: {report:?}");
    }

    #[test]
    fn x3d_m_spatial_pyramid() {
        let g = x3d_m();
        assert_eq!(g.node("stem_conv_xy").unwrap().sp_out.as_array(), [24, 16, 128, 128]);
        assert_eq!(g.node("res2_b0_relu").unwrap().sp_out.as_array(), [24, 16, 64, 64]);
        assert_eq!(g.node("res3_b0_relu").unwrap().sp_out.as_array(), [48, 16, 32, 32]);
        assert_eq!(g.node("res4_b0_relu").unwrap().sp_out.as_array(), [96, 16, 16, 16]);
        assert_eq!(g.node("res5_b0_relu").unwrap().sp_out.as_array(), [192, 16, 8, 8]);
        assert_eq!(g.node("head_fc2").unwrap().sp_out.as_array(), [400, 1, 1, 1]);
    }

    #[test]
    fn x3d_m_round_trips_through_the_document_format() {
        let g = x3d_m();
        let text = to_json(&g);
        let g2 = parse_model(&text).expect("re-parse");
        assert_eq!(g.name, g2.name);
        assert_eq!(g.nodes, g2.nodes);
        let text2 = to_json(&g2);
        assert_eq!(text, text2);
    }

    #[test]
    fn se_width_rounding() {
        assert_eq!(se_width(54), 8);
        assert_eq!(se_width(108), 8);
        assert_eq!(se_width(216), 16);
        assert_eq!(se_width(432), 24);
    }
}
