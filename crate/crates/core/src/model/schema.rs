//! Model description document: parsing and serialization.
//!
//! The document is JSON with top-level keys `name` and `layers`; every layer
//! is `{id, kind, inputs, sp_in, sp_out, params}` and shapes are 4-arrays
//! `[C, D, H, W]`. Edges are implicit through `inputs`. `sp_in` accepts a
//! single 4-array for one-input layers or a list of 4-arrays for element-wise
//! layers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ActivationParams, ConvParams, ElementWiseParams, LayerNode, LayerParams, ModelGraph,
    TensorShape,
};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RawModel {
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    workload_gop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    workload_gop_alt: Option<f64>,
    layers: Vec<RawLayer>,
}

#[derive(Serialize, Deserialize)]
struct RawLayer {
    id: String,
    kind: String,
    #[serde(default)]
    inputs: Vec<String>,
    sp_in: ShapeOrShapes,
    sp_out: [u64; 4],
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    params: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ShapeOrShapes {
    One([u64; 4]),
    Many(Vec<[u64; 4]>),
}

fn parse_err(node: &str, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        node: node.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn shape_from(node: &str, field: &str, a: [u64; 4]) -> Result<TensorShape> {
    let s = TensorShape::from_array(a);
    if !s.is_valid() {
        return Err(parse_err(
            node,
            field,
            format!("all shape components must be >= 1, got {:?}", a),
        ));
    }
    Ok(s)
}

/// Parses a model description document into a validated [`ModelGraph`].
pub fn parse_model(document: &str) -> Result<ModelGraph> {
    let raw: RawModel = serde_json::from_str(document)
        .map_err(|e| parse_err("", "document", e.to_string()))?;

    let mut nodes = Vec::with_capacity(raw.layers.len());
    for layer in &raw.layers {
        let sp_in = match &layer.sp_in {
            ShapeOrShapes::One(a) => vec![shape_from(&layer.id, "sp_in", *a)?],
            ShapeOrShapes::Many(v) => {
                if v.is_empty() {
                    return Err(parse_err(&layer.id, "sp_in", "at least one input shape required"));
                }
                v.iter()
                    .map(|a| shape_from(&layer.id, "sp_in", *a))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let sp_out = shape_from(&layer.id, "sp_out", layer.sp_out)?;
        let params = match layer.kind.as_str() {
            "Conv3D" => {
                let p: ConvParams = serde_json::from_value(layer.params.clone())
                    .map_err(|e| parse_err(&layer.id, "params", e.to_string()))?;
                if p.gp == 0 {
                    return Err(parse_err(&layer.id, "params.gp", "groups must be positive"));
                }
                if p.ks.iter().any(|&k| k == 0) || p.sr.iter().any(|&s| s == 0) {
                    return Err(parse_err(
                        &layer.id,
                        "params.ks/sr",
                        "kernel and stride entries must be positive",
                    ));
                }
                LayerParams::Conv3D(p)
            }
            "Activation" => {
                let p: ActivationParams = serde_json::from_value(layer.params.clone())
                    .map_err(|e| parse_err(&layer.id, "params", e.to_string()))?;
                LayerParams::Activation(p)
            }
            "ElementWise" => {
                if layer.inputs.len() < 2 {
                    return Err(parse_err(
                        &layer.id,
                        "inputs",
                        format!("ElementWise requires >= 2 inputs, got {}", layer.inputs.len()),
                    ));
                }
                let p: ElementWiseParams = serde_json::from_value(layer.params.clone())
                    .map_err(|e| parse_err(&layer.id, "params", e.to_string()))?;
                LayerParams::ElementWise(p)
            }
            "GlobalAvgPool" => LayerParams::GlobalAvgPool,
            other => {
                return Err(parse_err(
                    &layer.id,
                    "kind",
                    format!("unknown layer kind `{other}`"),
                ));
            }
        };
        nodes.push(LayerNode {
            id: layer.id.clone(),
            inputs: layer.inputs.clone(),
            sp_in,
            sp_out,
            params,
        });
    }

    ModelGraph::new(raw.name, nodes, raw.workload_gop, raw.workload_gop_alt)
}

/// Parses a model description from a file on disk.
pub fn parse_model_file(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)
}

/// Serializes a [`ModelGraph`] back into the document format.
pub fn to_json(graph: &ModelGraph) -> String {
    let layers = graph
        .nodes
        .iter()
        .map(|n| {
            let params = match &n.params {
                LayerParams::Conv3D(p) => serde_json::to_value(p).unwrap(),
                LayerParams::Activation(p) => serde_json::to_value(p).unwrap(),
                LayerParams::ElementWise(p) => serde_json::to_value(p).unwrap(),
                LayerParams::GlobalAvgPool => serde_json::Value::Null,
            };
            RawLayer {
                id: n.id.clone(),
                kind: n.kind().to_string(),
                inputs: n.inputs.clone(),
                sp_in: if n.sp_in.len() == 1 {
                    ShapeOrShapes::One(n.sp_in[0].as_array())
                } else {
                    ShapeOrShapes::Many(n.sp_in.iter().map(|s| s.as_array()).collect())
                },
                sp_out: n.sp_out.as_array(),
                params,
            }
        })
        .collect();
    let raw = RawModel {
        name: graph.name.clone(),
        workload_gop: graph.workload_gop,
        workload_gop_alt: graph.workload_gop_alt,
        layers,
    };
    serde_json::to_string_pretty(&raw).expect("model serialization cannot fail")
}
