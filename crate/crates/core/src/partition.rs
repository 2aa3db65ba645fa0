//! Reconfiguration partitions.
//!
//! The model is split at the points where exactly one tensor value crosses
//! the cut, so every multicast fork and its merge stay inside one partition.
//! Segments containing merge nodes are matched against the three residual
//! block templates (double branching with a squeeze-and-excitation pool, with
//! or without a projection on the skip path, and single-branch residual);
//! everything else — stem, head, unmatched structure — is grouped into
//! `Residual` partitions so the partitions cover the model exactly.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerNode, LayerParams, ModelGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionKind {
    Type1,
    Type2,
    Type3,
    Residual,
}

impl std::fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PartitionKind::Type1 => "Type1",
            PartitionKind::Type2 => "Type2",
            PartitionKind::Type3 => "Type3",
            PartitionKind::Residual => "Residual",
        };
        f.write_str(s)
    }
}

/// The single value entering and the single value leaving a partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionBoundary {
    /// Producer of the partition's input value; `None` is the model input.
    pub input: Option<String>,
    /// Node producing the partition's output value.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub id: usize,
    pub kind: PartitionKind,
    /// Member layer ids in topological order.
    pub node_ids: Vec<String>,
    pub boundary: PartitionBoundary,
}

/// Partition counts by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub type1: usize,
    pub type2: usize,
    pub type3: usize,
    pub residual: usize,
}

impl Census {
    pub fn of(partitions: &[Partition]) -> Census {
        let mut c = Census::default();
        for p in partitions {
            match p.kind {
                PartitionKind::Type1 => c.type1 += 1,
                PartitionKind::Type2 => c.type2 += 1,
                PartitionKind::Type3 => c.type3 += 1,
                PartitionKind::Residual => c.residual += 1,
            }
        }
        c
    }

    /// Number of typed (non-residual) partitions.
    pub fn typed(&self) -> usize {
        self.type1 + self.type2 + self.type3
    }
}

impl std::fmt::Display for Census {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} partitions ({}/{}/{}), {} residual",
            self.typed(),
            self.type1,
            self.type2,
            self.type3,
            self.residual
        )
    }
}

fn is_merge(node: &LayerNode) -> bool {
    matches!(node.params, LayerParams::ElementWise(_))
}

/// True when `to` is reachable from `from` through edges internal to `members`.
fn reaches(g: &ModelGraph, members: &HashSet<usize>, from: usize, to: usize) -> bool {
    let mut stack = vec![from];
    let mut seen = HashSet::new();
    while let Some(i) = stack.pop() {
        if i == to {
            return true;
        }
        if !seen.insert(i) {
            continue;
        }
        for &(c, _) in g.consumers(i) {
            if members.contains(&c) {
                stack.push(c);
            }
        }
    }
    false
}

/// Classifies a candidate block subgraph against the residual templates.
/// Types 1 and 2 are double-branching blocks (two nested merges with a
/// global pool on the inner branch), distinguished by whether the outer
/// residual path runs through a projection convolution; type 3 is the
/// single-merge residual block. Anything else falls back to `Residual`.
pub fn classify_block(g: &ModelGraph, members: &[usize]) -> PartitionKind {
    if members.is_empty() {
        return PartitionKind::Residual;
    }
    let set: HashSet<usize> = members.iter().copied().collect();
    let merges: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&i| is_merge(&g.nodes[i]))
        .collect();
    match merges.len() {
        1 => PartitionKind::Type3,
        2 => {
            let (a, b) = (merges[0], merges[1]);
            let (inner, outer) = if reaches(g, &set, a, b) {
                (a, b)
            } else if reaches(g, &set, b, a) {
                (b, a)
            } else {
                return PartitionKind::Residual;
            };
            let gap_on_inner = members.iter().any(|&i| {
                g.nodes[i].kind() == LayerKind::GlobalAvgPool && reaches(g, &set, i, inner)
            });
            if !gap_on_inner {
                return PartitionKind::Residual;
            }
            // The outer merge's residual-side input either comes straight
            // from outside the block (no projection) or through a single
            // convolution whose own input is outside the block.
            let mut direct_skip = false;
            let mut projected_skip = false;
            for src in &g.nodes[outer].inputs {
                let p = g.idx(src).expect("validated graph");
                if !set.contains(&p) {
                    direct_skip = true;
                } else if g.nodes[p].kind() == LayerKind::Conv3D
                    && !reaches(g, &set, inner, p)
                    && g.nodes[p]
                        .inputs
                        .iter()
                        .all(|s| !set.contains(&g.idx(s).expect("validated graph")))
                {
                    projected_skip = true;
                }
            }
            if projected_skip {
                PartitionKind::Type1
            } else if direct_skip {
                PartitionKind::Type2
            } else {
                PartitionKind::Residual
            }
        }
        _ => PartitionKind::Residual,
    }
}

/// Sentinel for the model's external input value in the frontier map.
const EXTERNAL: usize = usize::MAX;

/// Splits the model into partitions. Cuts are placed only where a single
/// value crosses the boundary; a block extends through its merge node's
/// output activation when present. Deterministic for a given graph.
pub fn partition_model(g: &ModelGraph) -> Result<Vec<Partition>> {
    // Raw segments between single-value frontier points.
    let mut open: HashMap<usize, usize> = HashMap::new();
    open.insert(EXTERNAL, 1);
    let mut raw: Vec<(Vec<usize>, usize)> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for &i in g.topo_order() {
        let node = &g.nodes[i];
        if node.inputs.is_empty() {
            consume(&mut open, EXTERNAL)?;
        } else {
            for src in &node.inputs {
                let p = g.idx(src).expect("validated graph");
                consume(&mut open, p)?;
            }
        }
        // A sink's output leaves the model and stays open until the end.
        open.insert(i, g.consumers(i).len().max(1));
        current.push(i);
        if open.len() == 1 {
            raw.push((std::mem::take(&mut current), i));
        }
    }
    if !current.is_empty() {
        return Err(Error::Structure(
            "a branch spans the final partition boundary without closing".into(),
        ));
    }

    // A merge-containing segment absorbs a directly following lone
    // activation: the block ends at its merge's output activation.
    let mut segments: Vec<(Vec<usize>, usize)> = Vec::new();
    let mut it = raw.into_iter().peekable();
    while let Some((mut nodes, mut out)) = it.next() {
        let has_merge = nodes.iter().any(|&i| is_merge(&g.nodes[i]));
        if has_merge && g.consumers(out).len() == 1 {
            if let Some((next_nodes, _)) = it.peek() {
                if next_nodes.len() == 1
                    && g.nodes[next_nodes[0]].kind() == LayerKind::Activation
                {
                    let (next_nodes, next_out) = it.next().expect("peeked");
                    nodes.extend(next_nodes);
                    out = next_out;
                }
            }
        }
        segments.push((nodes, out));
    }

    // Classify merge segments; coalesce runs of merge-free segments.
    let mut partitions: Vec<Partition> = Vec::new();
    let mut pending: Vec<usize> = Vec::new();
    let mut pending_input: Option<usize> = None;
    let mut prev_out: Option<usize> = None;

    let flush_pending =
        |pending: &mut Vec<usize>, pending_input: Option<usize>, partitions: &mut Vec<Partition>| {
            if pending.is_empty() {
                return;
            }
            let nodes = std::mem::take(pending);
            let output = *nodes.last().expect("non-empty");
            partitions.push(Partition {
                id: 0,
                kind: PartitionKind::Residual,
                node_ids: nodes.iter().map(|&i| g.nodes[i].id.clone()).collect(),
                boundary: PartitionBoundary {
                    input: pending_input.map(|p| g.nodes[p].id.clone()),
                    output: g.nodes[output].id.clone(),
                },
            });
        };

    for (nodes, out) in segments {
        let input = prev_out;
        let has_merge = nodes.iter().any(|&i| is_merge(&g.nodes[i]));
        if has_merge {
            flush_pending(&mut pending, pending_input, &mut partitions);
            let kind = classify_block(g, &nodes);
            partitions.push(Partition {
                id: 0,
                kind,
                node_ids: nodes.iter().map(|&i| g.nodes[i].id.clone()).collect(),
                boundary: PartitionBoundary {
                    input: input.map(|p| g.nodes[p].id.clone()),
                    output: g.nodes[out].id.clone(),
                },
            });
        } else {
            if pending.is_empty() {
                pending_input = input;
            }
            pending.extend(nodes);
        }
        prev_out = Some(out);
    }
    flush_pending(&mut pending, pending_input, &mut partitions);

    for (id, p) in partitions.iter_mut().enumerate() {
        p.id = id;
    }
    Ok(partitions)
}

fn consume(open: &mut HashMap<usize, usize>, producer: usize) -> Result<()> {
    match open.get_mut(&producer) {
        Some(count) => {
            *count -= 1;
            if *count == 0 {
                open.remove(&producer);
            }
            Ok(())
        }
        None => Err(Error::Structure(
            "consumer appears before its producer's value is open".into(),
        )),
    }
}

/// Where a partition member's input value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// The partition's external input value.
    External,
    /// Output of another member, by position in the partition order.
    Member(usize),
}

/// A partition resolved against its graph: member nodes in order plus
/// internal wiring, the form consumed by the SDF builder and the DSE.
pub struct PartitionView<'g> {
    pub graph: &'g ModelGraph,
    pub partition: &'g Partition,
    members: Vec<usize>,
    position: HashMap<usize, usize>,
}

impl<'g> PartitionView<'g> {
    pub fn new(graph: &'g ModelGraph, partition: &'g Partition) -> Result<Self> {
        let mut members = Vec::with_capacity(partition.node_ids.len());
        let mut position = HashMap::new();
        for id in &partition.node_ids {
            let idx = graph
                .idx(id)
                .ok_or_else(|| Error::Structure(format!("partition references unknown node `{id}`")))?;
            position.insert(idx, members.len());
            members.push(idx);
        }
        let view = Self { graph, partition, members, position };
        // Every out-of-partition reference must be the single input value.
        for pos in 0..view.len() {
            view.sources(pos)?;
        }
        Ok(view)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn node(&self, pos: usize) -> &'g LayerNode {
        &self.graph.nodes[self.members[pos]]
    }

    /// Input sources of member `pos`, one per input slot (a source node has
    /// one implicit external input).
    pub fn sources(&self, pos: usize) -> Result<Vec<Source>> {
        let node = self.node(pos);
        if node.inputs.is_empty() {
            return Ok(vec![Source::External]);
        }
        node.inputs
            .iter()
            .map(|src| {
                let idx = self.graph.idx(src).expect("validated graph");
                if let Some(&p) = self.position.get(&idx) {
                    Ok(Source::Member(p))
                } else if self.partition.boundary.input.as_deref() == Some(src.as_str()) {
                    Ok(Source::External)
                } else {
                    Err(Error::Structure(format!(
                        "partition {} node `{}` consumes `{}` which is neither a member nor the partition input",
                        self.partition.id, node.id, src
                    )))
                }
            })
            .collect()
    }

    /// Position of the member producing the partition output value.
    pub fn output_pos(&self) -> usize {
        let idx = self
            .graph
            .idx(&self.partition.boundary.output)
            .expect("validated partition");
        self.position[&idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_model, to_json};
    use crate::zoo::x3d_m;

    #[test]
    fn x3d_m_census_is_26_typed_4_11_11() {
        let g = x3d_m();
        let parts = partition_model(&g).unwrap();
        let census = Census::of(&parts);
        assert_eq!(census.typed(), 26);
        assert_eq!(census.type1, 4);
        assert_eq!(census.type2, 11);
        assert_eq!(census.type3, 11);
        // Stem and head fall into residual partitions.
        assert_eq!(census.residual, 2);
        // Coverage and disjointness.
        let total: usize = parts.iter().map(|p| p.node_ids.len()).sum();
        assert_eq!(total, g.len());
        let unique: std::collections::HashSet<&String> =
            parts.iter().flat_map(|p| p.node_ids.iter()).collect();
        assert_eq!(unique.len(), g.len());
    }

    #[test]
    fn partitioning_is_deterministic() {
        let g = x3d_m();
        let a = partition_model(&g).unwrap();
        let b = partition_model(&g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partitions_concatenate_in_topological_order() {
        let g = x3d_m();
        let parts = partition_model(&g).unwrap();
        let concat: Vec<usize> = parts
            .iter()
            .flat_map(|p| p.node_ids.iter().map(|id| g.idx(id).unwrap()))
            .collect();
        // Verify the concatenation is a topological order: every edge goes
        // forward.
        let mut rank = vec![0usize; g.len()];
        for (r, &i) in concat.iter().enumerate() {
            rank[i] = r;
        }
        for (p, c, _) in g.edges() {
            assert!(rank[p] < rank[c]);
        }
    }

    #[test]
    fn every_partition_is_viewable() {
        let g = x3d_m();
        let parts = partition_model(&g).unwrap();
        for p in &parts {
            let view = PartitionView::new(&g, p).unwrap();
            assert_eq!(view.len(), p.node_ids.len());
            assert_eq!(view.node(view.output_pos()).id, p.boundary.output);
        }
    }

    #[test]
    fn linear_model_collapses_to_one_residual_partition() {
        let doc = r#"{
            "name": "linear3",
            "layers": [
                {"id": "c1", "kind": "Conv3D", "inputs": [], "sp_in": [4,4,8,8], "sp_out": [8,4,8,8], "params": {"ks": [1,1,1]}},
                {"id": "c2", "kind": "Conv3D", "inputs": ["c1"], "sp_in": [8,4,8,8], "sp_out": [8,4,8,8], "params": {"ks": [3,3,3], "pad": [1,1,1]}},
                {"id": "c3", "kind": "Conv3D", "inputs": ["c2"], "sp_in": [8,4,8,8], "sp_out": [4,4,8,8], "params": {"ks": [1,1,1]}}
            ]
        }"#;
        let g = parse_model(doc).unwrap();
        let parts = partition_model(&g).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].kind, PartitionKind::Residual);
        assert_eq!(parts[0].node_ids.len(), 3);
    }

    #[test]
    fn classifier_matches_block_templates() {
        let g = x3d_m();
        let parts = partition_model(&g).unwrap();
        // res2_b0 carries SE and a projection; res2_b2 SE only; res2_b1 none.
        let find = |needle: &str| {
            parts
                .iter()
                .find(|p| p.node_ids.iter().any(|id| id.starts_with(needle)))
                .unwrap()
        };
        assert_eq!(find("res2_b0").kind, PartitionKind::Type1);
        assert_eq!(find("res2_b2").kind, PartitionKind::Type2);
        assert_eq!(find("res2_b1").kind, PartitionKind::Type3);

        // Direct template application.
        let p = find("res4_b3");
        let members: Vec<usize> = p.node_ids.iter().map(|id| g.idx(id).unwrap()).collect();
        assert_eq!(classify_block(&g, &members), PartitionKind::Type3);
        assert_eq!(classify_block(&g, &[]), PartitionKind::Residual);
    }

    #[test]
    fn typed_blocks_end_at_the_output_activation() {
        let g = x3d_m();
        let parts = partition_model(&g).unwrap();
        for p in parts.iter().filter(|p| p.kind != PartitionKind::Residual) {
            assert!(p.boundary.output.ends_with("_relu"), "{}", p.boundary.output);
        }
    }

    #[test]
    fn round_trip_preserves_partitioning() {
        let g = x3d_m();
        let g2 = parse_model(&to_json(&g)).unwrap();
        assert_eq!(partition_model(&g).unwrap(), partition_model(&g2).unwrap());
    }
}
