//! Typed layer DAG parsed from a model description document.
//!
//! A model is a list of layers, each carrying its input/output tensor shapes
//! and kind-specific parameters. Connectivity is implicit through each layer's
//! `inputs` list; a layer with no inputs consumes the external input tensor.
//! Construction enforces the structural invariants (unique ids, resolvable
//! inputs, acyclicity, a single connected component, exactly one source and
//! one sink); shape arithmetic is re-checked by [`validate_graph`].

mod schema;
mod validate;

pub use schema::{parse_model, parse_model_file, to_json};
pub use validate::{validate_graph, Violation};

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

/// Tensor extents as (channels, temporal depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorShape {
    pub c: u64,
    pub d: u64,
    pub h: u64,
    pub w: u64,
}

impl TensorShape {
    pub fn new(c: u64, d: u64, h: u64, w: u64) -> Self {
        Self { c, d, h, w }
    }

    /// Total number of elements.
    pub fn volume(&self) -> u64 {
        self.c * self.d * self.h * self.w
    }

    /// Elements per channel (D·H·W).
    pub fn spatial_volume(&self) -> u64 {
        self.d * self.h * self.w
    }

    pub fn as_array(&self) -> [u64; 4] {
        [self.c, self.d, self.h, self.w]
    }

    pub fn from_array(a: [u64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// All components strictly positive.
    pub fn is_valid(&self) -> bool {
        self.c >= 1 && self.d >= 1 && self.h >= 1 && self.w >= 1
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.c, self.d, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv3D,
    Activation,
    ElementWise,
    GlobalAvgPool,
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LayerKind::Conv3D => "Conv3D",
            LayerKind::Activation => "Activation",
            LayerKind::ElementWise => "ElementWise",
            LayerKind::GlobalAvgPool => "GlobalAvgPool",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ActivationType {
    Relu,
    Sigmoid,
    Swish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ElementWiseOp {
    Add,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ElementWiseMode {
    Normal,
    Broadcast,
}

/// 3D convolution parameters: kernel, strides, padding, channel groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvParams {
    pub ks: [u64; 3],
    #[serde(default = "default_stride")]
    pub sr: [u64; 3],
    #[serde(default)]
    pub pad: [u64; 3],
    #[serde(default = "default_groups")]
    pub gp: u64,
}

fn default_stride() -> [u64; 3] {
    [1, 1, 1]
}

fn default_groups() -> u64 {
    1
}

impl ConvParams {
    pub fn kernel_volume(&self) -> u64 {
        self.ks[0] * self.ks[1] * self.ks[2]
    }

    pub fn is_pointwise(&self) -> bool {
        self.ks == [1, 1, 1]
    }

    pub fn is_depthwise(&self, c_in: u64) -> bool {
        self.gp == c_in && c_in > 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ActivationParams {
    pub t: ActivationType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ElementWiseParams {
    pub t: ElementWiseOp,
    #[serde(default = "default_ew_mode")]
    pub m: ElementWiseMode,
}

fn default_ew_mode() -> ElementWiseMode {
    ElementWiseMode::Normal
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerParams {
    Conv3D(ConvParams),
    Activation(ActivationParams),
    ElementWise(ElementWiseParams),
    GlobalAvgPool,
}

/// One DAG node: a layer with shapes, predecessors and typed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: String,
    pub inputs: Vec<String>,
    pub sp_in: Vec<TensorShape>,
    pub sp_out: TensorShape,
    pub params: LayerParams,
}

impl LayerNode {
    pub fn kind(&self) -> LayerKind {
        match self.params {
            LayerParams::Conv3D(_) => LayerKind::Conv3D,
            LayerParams::Activation(_) => LayerKind::Activation,
            LayerParams::ElementWise(_) => LayerKind::ElementWise,
            LayerParams::GlobalAvgPool => LayerKind::GlobalAvgPool,
        }
    }

    pub fn conv_params(&self) -> Option<&ConvParams> {
        match &self.params {
            LayerParams::Conv3D(p) => Some(p),
            _ => None,
        }
    }

    pub fn c_in(&self) -> u64 {
        self.sp_in[0].c
    }

    pub fn c_out(&self) -> u64 {
        self.sp_out.c
    }

    /// Multiply-accumulate count for one inference pass through this layer.
    /// Only convolutions contribute; the weight tensor shape is implied by
    /// the parameters, so no stored weights are needed.
    pub fn macs(&self) -> u128 {
        match &self.params {
            LayerParams::Conv3D(p) => {
                let out = self.sp_out;
                (out.spatial_volume() as u128)
                    * (out.c as u128)
                    * ((self.c_in() / p.gp) as u128)
                    * (p.kernel_volume() as u128)
            }
            _ => 0,
        }
    }
}

/// Output shape of a convolution: `floor((in + 2·pad − ks)/sr) + 1` per
/// spatial/temporal dimension, channels taken from the weight shape.
pub fn conv_output_shape(sp_in: &TensorShape, p: &ConvParams, c_out: u64) -> Result<TensorShape> {
    let dims_in = [sp_in.d, sp_in.h, sp_in.w];
    let mut dims_out = [0u64; 3];
    for i in 0..3 {
        let padded = dims_in[i] + 2 * p.pad[i];
        if p.ks[i] == 0 || p.sr[i] == 0 {
            return Err(Error::Shape(format!(
                "kernel/stride must be positive, got ks={:?} sr={:?}",
                p.ks, p.sr
            )));
        }
        if p.ks[i] > padded {
            return Err(Error::Shape(format!(
                "kernel {} exceeds padded input extent {} in dimension {}",
                p.ks[i], padded, i
            )));
        }
        dims_out[i] = (padded - p.ks[i]) / p.sr[i] + 1;
    }
    Ok(TensorShape::new(c_out, dims_out[0], dims_out[1], dims_out[2]))
}

/// The parsed model: nodes in document order plus derived connectivity.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub name: String,
    pub nodes: Vec<LayerNode>,
    /// Declared model workload in GOp (MAC-counted), if the description
    /// records one; otherwise derived from the layer parameters.
    pub workload_gop: Option<f64>,
    /// Alternative published complexity figure kept for reference.
    pub workload_gop_alt: Option<f64>,
    index: HashMap<String, usize>,
    consumers: Vec<Vec<(usize, usize)>>,
    topo: Vec<usize>,
}

impl ModelGraph {
    pub fn new(
        name: String,
        nodes: Vec<LayerNode>,
        workload_gop: Option<f64>,
        workload_gop_alt: Option<f64>,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Graph("model has no layers".into()));
        }
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::Graph(format!("duplicate layer id `{}`", n.id)));
            }
        }
        let mut consumers: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes.len()];
        let mut sources = Vec::new();
        for (i, n) in nodes.iter().enumerate() {
            match (&n.params, n.inputs.len()) {
                (LayerParams::ElementWise(_), k) if k < 2 => {
                    return Err(Error::Graph(format!(
                        "node `{}`: ElementWise requires >= 2 inputs, got {}",
                        n.id, k
                    )));
                }
                (LayerParams::ElementWise(_), _) => {}
                (_, 0) => sources.push(i),
                (_, 1) => {}
                (_, k) => {
                    return Err(Error::Graph(format!(
                        "node `{}`: {} takes exactly 1 input, got {}",
                        n.id,
                        n.kind(),
                        k
                    )));
                }
            }
            let expected = n.inputs.len().max(1);
            if n.sp_in.len() != expected {
                return Err(Error::Graph(format!(
                    "node `{}`: {} input shapes declared for {} inputs",
                    n.id,
                    n.sp_in.len(),
                    expected
                )));
            }
            for (slot, src) in n.inputs.iter().enumerate() {
                match index.get(src) {
                    Some(&j) => consumers[j].push((i, slot)),
                    None => {
                        return Err(Error::Graph(format!(
                            "node `{}` references unknown input `{}` (dangling edge)",
                            n.id, src
                        )));
                    }
                }
            }
        }
        if sources.len() != 1 {
            return Err(Error::Graph(format!(
                "expected exactly one graph input, found {}",
                sources.len()
            )));
        }
        let sinks: Vec<usize> = (0..nodes.len()).filter(|&i| consumers[i].is_empty()).collect();
        if sinks.len() != 1 {
            return Err(Error::Graph(format!(
                "expected exactly one graph output, found {}",
                sinks.len()
            )));
        }

        // Kahn's algorithm; doubles as the constructive acyclicity check.
        let mut indegree: Vec<usize> = nodes.iter().map(|n| n.inputs.len()).collect();
        let mut ready: VecDeque<usize> =
            (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut topo = Vec::with_capacity(nodes.len());
        while let Some(i) = ready.pop_front() {
            topo.push(i);
            for &(c, _) in &consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push_back(c);
                }
            }
        }
        if topo.len() != nodes.len() {
            return Err(Error::Graph("cycle detected in layer graph".into()));
        }

        // Weak connectivity over the undirected edge set.
        let mut seen = vec![false; nodes.len()];
        let mut queue = VecDeque::from([sources[0]]);
        seen[sources[0]] = true;
        let producer_lists: Vec<Vec<usize>> = nodes
            .iter()
            .map(|n| n.inputs.iter().map(|s| index[s]).collect())
            .collect();
        while let Some(i) = queue.pop_front() {
            for &(c, _) in &consumers[i] {
                if !seen[c] {
                    seen[c] = true;
                    queue.push_back(c);
                }
            }
            for &p in &producer_lists[i] {
                if !seen[p] {
                    seen[p] = true;
                    queue.push_back(p);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Graph("graph is not a single connected component".into()));
        }

        Ok(Self {
            name,
            nodes,
            workload_gop,
            workload_gop_alt,
            index,
            consumers,
            topo,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn idx(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.idx(id).map(|i| &self.nodes[i])
    }

    /// Consumers of node `i` as `(consumer index, input slot)` pairs.
    pub fn consumers(&self, i: usize) -> &[(usize, usize)] {
        &self.consumers[i]
    }

    /// Node indices in a deterministic topological order.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// Index of the unique source (graph input) node.
    pub fn source_idx(&self) -> usize {
        self.topo[0]
    }

    /// Index of the unique sink (graph output) node.
    pub fn sink_idx(&self) -> usize {
        (0..self.nodes.len())
            .find(|&i| self.consumers[i].is_empty())
            .expect("validated graph has a sink")
    }

    /// All edges as `(producer, consumer, input slot)` index triples.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (p, list) in self.consumers.iter().enumerate() {
            for &(c, slot) in list {
                out.push((p, c, slot));
            }
        }
        out
    }

    pub fn total_macs(&self) -> u128 {
        self.nodes.iter().map(|n| n.macs()).sum()
    }

    /// Model workload in GOp: the recorded figure when present, otherwise
    /// MAC-counted from the layer parameters.
    pub fn workload_gop(&self) -> f64 {
        self.workload_gop
            .unwrap_or_else(|| self.total_macs() as f64 / 1e9)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_shape_examples() {
        // Pointwise: geometry unchanged.
        let sp = TensorShape::new(3, 16, 16, 16);
        let p = ConvParams { ks: [1, 1, 1], sr: [1, 1, 1], pad: [0, 0, 0], gp: 1 };
        assert_eq!(conv_output_shape(&sp, &p, 24).unwrap(), TensorShape::new(24, 16, 16, 16));

        // Strided 3x3x3 with padding 1: spatial halves, temporal kept.
        let sp = TensorShape::new(3, 16, 32, 32);
        let p = ConvParams { ks: [3, 3, 3], sr: [1, 2, 2], pad: [1, 1, 1], gp: 1 };
        assert_eq!(conv_output_shape(&sp, &p, 8).unwrap(), TensorShape::new(8, 16, 16, 16));

        // Kernel exceeding the padded input is a shape error.
        let sp = TensorShape::new(3, 1, 1, 1);
        let p = ConvParams { ks: [3, 3, 3], sr: [1, 1, 1], pad: [0, 0, 0], gp: 1 };
        assert!(conv_output_shape(&sp, &p, 8).is_err());
    }

    #[test]
    fn single_relu_model_parses() {
        let doc = r#"{
            "name": "id",
            "layers": [
                {"id": "r", "kind": "Activation", "inputs": [], "sp_in": [1,1,1,1], "sp_out": [1,1,1,1], "params": {"t": "Relu"}}
            ]
        }"#;
        let g = parse_model(doc).unwrap();
        assert_eq!(g.len(), 1);
        assert!(validate_graph(&g).is_empty());
    }

    #[test]
    fn elementwise_arity_is_a_parse_error() {
        let doc = r#"{
            "name": "bad",
            "layers": [
                {"id": "x", "kind": "Activation", "inputs": [], "sp_in": [1,1,1,1], "sp_out": [1,1,1,1], "params": {"t": "Relu"}},
                {"id": "e", "kind": "ElementWise", "inputs": ["x"], "sp_in": [[1,1,1,1]], "sp_out": [1,1,1,1], "params": {"t": "Add"}}
            ]
        }"#;
        let err = parse_model(doc).unwrap_err();
        assert!(err.to_string().contains("ElementWise requires >= 2 inputs"), "{err}");
        assert!(err.to_string().contains("`e`"), "{err}");
    }

    #[test]
    fn dangling_and_cyclic_graphs_are_rejected() {
        let dangling = r#"{
            "name": "bad",
            "layers": [
                {"id": "a", "kind": "Activation", "inputs": ["ghost"], "sp_in": [1,1,1,1], "sp_out": [1,1,1,1], "params": {"t": "Relu"}}
            ]
        }"#;
        let err = parse_model(dangling).unwrap_err();
        assert!(err.to_string().contains("dangling"), "{err}");

        let cyclic = r#"{
            "name": "bad",
            "layers": [
                {"id": "a", "kind": "Activation", "inputs": ["b"], "sp_in": [1,1,1,1], "sp_out": [1,1,1,1], "params": {"t": "Relu"}},
                {"id": "b", "kind": "Activation", "inputs": ["a"], "sp_in": [1,1,1,1], "sp_out": [1,1,1,1], "params": {"t": "Relu"}}
            ]
        }"#;
        let err = parse_model(cyclic).unwrap_err();
        // A two-node cycle has no source, which is reported first; either
        // message identifies a structural graph error.
        assert!(matches!(err, Error::Graph(_)), "{err}");
    }

    #[test]
    fn unknown_kind_names_node_and_field() {
        let doc = r#"{
            "name": "bad",
            "layers": [
                {"id": "z", "kind": "Pool9D", "inputs": [], "sp_in": [1,1,1,1], "sp_out": [1,1,1,1]}
            ]
        }"#;
        match parse_model(doc).unwrap_err() {
            Error::Parse { node, field, .. } => {
                assert_eq!(node, "z");
                assert_eq!(field, "kind");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn validation_reports_shape_mismatches() {
        // Declared conv output disagrees with the computed shape.
        let doc = r#"{
            "name": "m",
            "layers": [
                {"id": "c", "kind": "Conv3D", "inputs": [], "sp_in": [4,4,4,4], "sp_out": [8,4,4,3], "params": {"ks": [1,1,1]}}
            ]
        }"#;
        let g = parse_model(doc).unwrap();
        let report = validate_graph(&g);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].node, "c");
        assert!(report[0].message.contains("does not match computed"));
    }

    #[test]
    fn validation_reports_bad_broadcast_vector() {
        let doc = r#"{
            "name": "m",
            "layers": [
                {"id": "a", "kind": "Activation", "inputs": [], "sp_in": [4,2,2,2], "sp_out": [4,2,2,2], "params": {"t": "Relu"}},
                {"id": "g", "kind": "GlobalAvgPool", "inputs": ["a"], "sp_in": [4,2,2,2], "sp_out": [4,1,1,1]},
                {"id": "m", "kind": "ElementWise", "inputs": ["a", "g"], "sp_in": [[4,2,2,2],[4,1,1,1]], "sp_out": [4,2,2,2], "params": {"t": "Mul", "m": "Broadcast"}}
            ]
        }"#;
        let g = parse_model(doc).unwrap();
        assert!(validate_graph(&g).is_empty());

        // Vector shaped (C,2,1,1) instead of (C,1,1,1): one report entry
        // for the broadcast rule and one for the edge shape mismatch.
        let bad = doc.replace(
            r#""sp_in": [[4,2,2,2],[4,1,1,1]]"#,
            r#""sp_in": [[4,2,2,2],[4,2,1,1]]"#,
        );
        let g = parse_model(&bad).unwrap();
        let report = validate_graph(&g);
        assert!(report.iter().any(|v| v.node == "m" && v.message.contains("broadcast")));
    }

    #[test]
    fn macs_follow_the_weight_shape() {
        let doc = r#"{
            "name": "m",
            "layers": [
                {"id": "c", "kind": "Conv3D", "inputs": [], "sp_in": [4,2,4,4], "sp_out": [8,2,4,4], "params": {"ks": [3,3,3], "pad": [1,1,1]}}
            ]
        }"#;
        let g = parse_model(doc).unwrap();
        // out voxels (2*4*4) * C_out 8 * C_in 4 * K 27.
        assert_eq!(g.total_macs(), 32 * 8 * 4 * 27);
    }
}
