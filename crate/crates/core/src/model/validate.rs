//! Shape and invariant checking over a parsed graph.

use super::{conv_output_shape, ElementWiseMode, LayerParams, ModelGraph, TensorShape};

/// One invariant violation, attributed to a node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.node, self.message)
    }
}

/// Checks every per-layer invariant and the shape consistency of all edges.
/// Returns one entry per violation; an empty report means the graph is
/// well-formed. Structural problems (cycles, dangling edges) cannot occur
/// here because [`ModelGraph`] construction rejects them.
pub fn validate_graph(g: &ModelGraph) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut push = |node: &str, message: String| {
        report.push(Violation {
            node: node.to_string(),
            message,
        });
    };

    for n in &g.nodes {
        for s in n.sp_in.iter().chain(std::iter::once(&n.sp_out)) {
            if !s.is_valid() {
                push(&n.id, format!("shape {s} has a non-positive component"));
            }
        }
        match &n.params {
            LayerParams::Conv3D(p) => {
                if p.gp == 0 || n.c_in() % p.gp != 0 {
                    push(
                        &n.id,
                        format!("groups {} do not divide input channels {}", p.gp, n.c_in()),
                    );
                }
                if p.gp == 0 || n.c_out() % p.gp != 0 {
                    push(
                        &n.id,
                        format!("groups {} do not divide output channels {}", p.gp, n.c_out()),
                    );
                }
                match conv_output_shape(&n.sp_in[0], p, n.sp_out.c) {
                    Ok(expected) => {
                        if expected != n.sp_out {
                            push(
                                &n.id,
                                format!(
                                    "declared sp_out {} does not match computed {}",
                                    n.sp_out, expected
                                ),
                            );
                        }
                    }
                    Err(e) => push(&n.id, e.to_string()),
                }
            }
            LayerParams::Activation(_) => {
                if n.sp_in[0] != n.sp_out {
                    push(
                        &n.id,
                        format!("activation requires sp_in = sp_out, got {} vs {}", n.sp_in[0], n.sp_out),
                    );
                }
            }
            LayerParams::ElementWise(p) => match p.m {
                ElementWiseMode::Normal => {
                    if n.sp_in.iter().any(|s| *s != n.sp_in[0]) {
                        push(&n.id, "normal element-wise requires identical input shapes".into());
                    }
                    if n.sp_out != n.sp_in[0] {
                        push(
                            &n.id,
                            format!("element-wise output {} differs from inputs {}", n.sp_out, n.sp_in[0]),
                        );
                    }
                }
                ElementWiseMode::Broadcast => {
                    let main = n.sp_in[0];
                    let expected_vec = TensorShape::new(main.c, 1, 1, 1);
                    if n.sp_in.len() != 2 || n.sp_in[1] != expected_vec {
                        push(
                            &n.id,
                            format!(
                                "broadcast element-wise requires second input {}, got {}",
                                expected_vec,
                                n.sp_in.get(1).map(|s| s.to_string()).unwrap_or_else(|| "missing".into())
                            ),
                        );
                    }
                    if n.sp_out != main {
                        push(
                            &n.id,
                            format!("broadcast output {} differs from main input {}", n.sp_out, main),
                        );
                    }
                }
            },
            LayerParams::GlobalAvgPool => {
                let expected = TensorShape::new(n.sp_in[0].c, 1, 1, 1);
                if n.sp_out != expected {
                    push(
                        &n.id,
                        format!("global average pool output must be {}, got {}", expected, n.sp_out),
                    );
                }
            }
        }
    }

    // Edge shape consistency: the producer's output must match the shape the
    // consumer declares for that input slot.
    for (p, c, slot) in g.edges() {
        let produced = g.nodes[p].sp_out;
        let declared = g.nodes[c].sp_in[slot];
        if produced != declared {
            push(
                &g.nodes[c].id,
                format!(
                    "input {} expects {} but `{}` produces {}",
                    slot, declared, g.nodes[p].id, produced
                ),
            );
        }
    }

    report
}
