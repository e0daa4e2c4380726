//! Search spaces and architecture representations.
//!
//! A cell space is a DAG template: a fixed number of ordered operation
//! nodes, each selecting one or two predecessor nodes and an operation
//! per input slot. Architectures exist in two forms: the discrete
//! [`Genotype`] and its real-vector relaxation [`ContinuousArch`],
//! connected by [`lift`] and [`round`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Candidate operation applied along a cell edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    /// No connection: the edge contributes a zero vector and has no weights.
    Zero,
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Zero => "zero",
            Op::Identity => "identity",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Op::Zero),
            "identity" => Ok(Op::Identity),
            "tanh" => Ok(Op::Tanh),
            "relu" => Ok(Op::Relu),
            "sigmoid" => Ok(Op::Sigmoid),
            other => Err(Error::InvalidSpec(format!("unknown operation `{other}`"))),
        }
    }
}

/// Declarative description of a cell search space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    num_input_nodes: usize,
    num_op_nodes: usize,
    inputs_per_node: usize,
    ops: Vec<Op>,
    num_cell_types: usize,
}

impl CellSpec {
    pub fn new(
        num_input_nodes: usize,
        num_op_nodes: usize,
        inputs_per_node: usize,
        ops: Vec<Op>,
        num_cell_types: usize,
    ) -> Result<Self> {
        if num_input_nodes < 1 {
            return Err(Error::InvalidSpec("num_input_nodes must be >= 1".into()));
        }
        if num_op_nodes < 1 {
            return Err(Error::InvalidSpec("num_op_nodes must be >= 1".into()));
        }
        if !(inputs_per_node == 1 || inputs_per_node == 2) {
            return Err(Error::InvalidSpec(format!(
                "inputs_per_node must be 1 or 2, got {inputs_per_node}"
            )));
        }
        if ops.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 operations, got {}",
                ops.len()
            )));
        }
        if num_cell_types < 1 {
            return Err(Error::InvalidSpec("num_cell_types must be >= 1".into()));
        }
        Ok(CellSpec {
            num_input_nodes,
            num_op_nodes,
            inputs_per_node,
            ops,
            num_cell_types,
        })
    }

    /// The canonical micro space over the recurrent-style operation set.
    pub fn micro(num_op_nodes: usize, inputs_per_node: usize) -> Result<Self> {
        CellSpec::new(
            1,
            num_op_nodes,
            inputs_per_node,
            vec![Op::Zero, Op::Identity, Op::Tanh, Op::Relu, Op::Sigmoid],
            1,
        )
    }

    pub fn num_input_nodes(&self) -> usize {
        self.num_input_nodes
    }

    pub fn num_op_nodes(&self) -> usize {
        self.num_op_nodes
    }

    pub fn inputs_per_node(&self) -> usize {
        self.inputs_per_node
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn num_cell_types(&self) -> usize {
        self.num_cell_types
    }

    /// Total number of edge slots E across all cell types.
    pub fn num_edge_slots(&self) -> usize {
        self.num_cell_types * self.num_op_nodes * self.inputs_per_node
    }

    /// Number of legal source nodes for op node `node` (0-based).
    ///
    /// An op node may read from any cell input node or any strictly
    /// earlier op node, so the count is `num_input_nodes + node`.
    pub fn legal_sources(&self, node: usize) -> usize {
        self.num_input_nodes + node
    }

    /// Edge slots in canonical order: cell type, then op node, then slot.
    pub fn edge_slots(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.num_cell_types).flat_map(move |cell| {
            (0..self.num_op_nodes)
                .flat_map(move |node| (0..self.inputs_per_node).map(move |slot| (cell, node, slot)))
        })
    }

    /// Flat index of an edge slot in canonical order.
    pub fn slot_index(&self, cell: usize, node: usize, slot: usize) -> usize {
        (cell * self.num_op_nodes + node) * self.inputs_per_node + slot
    }

    /// Canonical one-line description, used for checkpoint hashing.
    pub fn canonical_string(&self) -> String {
        let ops: Vec<&str> = self.ops.iter().map(|o| o.name()).collect();
        format!(
            "cellspec {} {} {} {} {}|{}",
            self.num_input_nodes,
            self.num_op_nodes,
            self.inputs_per_node,
            self.ops.len(),
            self.num_cell_types,
            ops.join(",")
        )
    }

    /// FNV-1a hash of the canonical description.
    pub fn spec_hash(&self) -> u64 {
        fnv1a(self.canonical_string().as_bytes())
    }
}

/// FNV-1a over a byte slice. Stable across platforms and runs.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One discrete decision: which predecessor feeds the slot and with which op.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub op: usize,
}

/// A discrete architecture: one [`Edge`] per edge slot of its spec.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Genotype {
    /// Indexed `[cell_type][op_node][slot]`.
    cells: Vec<Vec<Vec<Edge>>>,
}

impl Genotype {
    /// Builds and validates a genotype against `spec`.
    pub fn new(cells: Vec<Vec<Vec<Edge>>>, spec: &CellSpec) -> Result<Self> {
        let g = Genotype { cells };
        g.validate(spec)?;
        Ok(g)
    }

    pub fn validate(&self, spec: &CellSpec) -> Result<()> {
        if self.cells.len() != spec.num_cell_types() {
            return Err(Error::InvalidGenotype(format!(
                "expected {} cell types, got {}",
                spec.num_cell_types(),
                self.cells.len()
            )));
        }
        for (cell, nodes) in self.cells.iter().enumerate() {
            if nodes.len() != spec.num_op_nodes() {
                return Err(Error::InvalidGenotype(format!(
                    "cell {cell}: expected {} op nodes, got {}",
                    spec.num_op_nodes(),
                    nodes.len()
                )));
            }
            for (node, slots) in nodes.iter().enumerate() {
                if slots.len() != spec.inputs_per_node() {
                    return Err(Error::InvalidGenotype(format!(
                        "cell {cell} node {node}: expected {} slots, got {}",
                        spec.inputs_per_node(),
                        slots.len()
                    )));
                }
                for (slot, edge) in slots.iter().enumerate() {
                    if edge.source >= spec.legal_sources(node) {
                        return Err(Error::InvalidGenotype(format!(
                            "cell {cell} node {node} slot {slot}: source {} out of range [0, {})",
                            edge.source,
                            spec.legal_sources(node)
                        )));
                    }
                    if edge.op >= spec.num_ops() {
                        return Err(Error::InvalidGenotype(format!(
                            "cell {cell} node {node} slot {slot}: op {} out of range [0, {})",
                            edge.op,
                            spec.num_ops()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn edge(&self, cell: usize, node: usize, slot: usize) -> Edge {
        self.cells[cell][node][slot]
    }

    /// Edges in canonical slot order, with their coordinates.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize, Edge)> + '_ {
        self.cells.iter().enumerate().flat_map(|(cell, nodes)| {
            nodes.iter().enumerate().flat_map(move |(node, slots)| {
                slots
                    .iter()
                    .enumerate()
                    .map(move |(slot, &edge)| (cell, node, slot, edge))
            })
        })
    }

    /// Structural congruence with `spec` (shape only, not value ranges).
    fn shape_matches(&self, spec: &CellSpec) -> bool {
        self.cells.len() == spec.num_cell_types()
            && self.cells.iter().all(|nodes| {
                nodes.len() == spec.num_op_nodes()
                    && nodes
                        .iter()
                        .all(|slots| slots.len() == spec.inputs_per_node())
            })
    }

    /// Stable content hash, used to derive retrain seeds.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for (_, _, _, e) in self.edges() {
            bytes.extend_from_slice(&(e.source as u64).to_le_bytes());
            bytes.extend_from_slice(&(e.op as u64).to_le_bytes());
        }
        fnv1a(&bytes)
    }
}

/// Real-vector relaxation of a genotype.
///
/// Layout: `[source_0, op_0, source_1, op_1, ...]` in canonical edge-slot
/// order, length `2 * E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousArch {
    values: Vec<f64>,
}

impl ContinuousArch {
    pub fn new(values: Vec<f64>, spec: &CellSpec) -> Result<Self> {
        let want = 2 * spec.num_edge_slots();
        if values.len() != want {
            return Err(Error::InvalidContinuous(format!(
                "expected {} values, got {}",
                want,
                values.len()
            )));
        }
        Ok(ContinuousArch { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Errors on the first NaN or infinite component.
    pub fn validate_finite(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    index: i,
                    context: format!("continuous architecture value {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Samples a uniform random genotype: per edge slot, the source is uniform
/// over legal predecessors and the op uniform over the operation set.
pub fn random_genotype<R: rand::Rng>(spec: &CellSpec, rng: &mut R) -> Genotype {
    let cells = (0..spec.num_cell_types())
        .map(|_| {
            (0..spec.num_op_nodes())
                .map(|node| {
                    (0..spec.inputs_per_node())
                        .map(|_| Edge {
                            source: rng.gen_range(0..spec.legal_sources(node)),
                            op: rng.gen_range(0..spec.num_ops()),
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Genotype { cells }
}

/// Embeds a genotype into the continuous space: each index becomes its
/// exact real value.
pub fn lift(g: &Genotype, spec: &CellSpec) -> ContinuousArch {
    let mut values = Vec::with_capacity(2 * spec.num_edge_slots());
    for (_, _, _, edge) in g.edges() {
        values.push(edge.source as f64);
        values.push(edge.op as f64);
    }
    ContinuousArch { values }
}

/// Rounds half-way values toward the larger integer.
fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

fn clamp_index(x: f64, max_exclusive: usize) -> usize {
    let r = round_half_up(x);
    if r < 0.0 {
        0
    } else if r >= max_exclusive as f64 {
        max_exclusive - 1
    } else {
        r as usize
    }
}

/// Maps a continuous architecture back to the nearest valid genotype:
/// round each value to the nearest integer (halves up), then clamp into
/// the slot's legal range.
pub fn round(c: &ContinuousArch, spec: &CellSpec) -> Result<Genotype> {
    let want = 2 * spec.num_edge_slots();
    if c.values.len() != want {
        return Err(Error::InvalidContinuous(format!(
            "expected {} values, got {}",
            want,
            c.values.len()
        )));
    }
    for (i, v) in c.values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                context: "cannot round non-finite value".into(),
            });
        }
    }
    let mut cells = Vec::with_capacity(spec.num_cell_types());
    let mut idx = 0;
    for _ in 0..spec.num_cell_types() {
        let mut nodes = Vec::with_capacity(spec.num_op_nodes());
        for node in 0..spec.num_op_nodes() {
            let mut slots = Vec::with_capacity(spec.inputs_per_node());
            for _ in 0..spec.inputs_per_node() {
                let source = clamp_index(c.values[idx], spec.legal_sources(node));
                let op = clamp_index(c.values[idx + 1], spec.num_ops());
                slots.push(Edge { source, op });
                idx += 2;
            }
            nodes.push(slots);
        }
        cells.push(nodes);
    }
    Ok(Genotype { cells })
}

/// Normalized Hamming distance over edge slots, in `[0, 1]`.
///
/// A slot counts as equal only when both its source and its op match.
pub fn distance(g1: &Genotype, g2: &Genotype, spec: &CellSpec) -> Result<f64> {
    if !g1.shape_matches(spec) || !g2.shape_matches(spec) {
        return Err(Error::SpecMismatch(
            "genotypes do not match the given spec".into(),
        ));
    }
    let mut differing = 0usize;
    for ((_, _, _, a), (_, _, _, b)) in g1.edges().zip(g2.edges()) {
        if a != b {
            differing += 1;
        }
    }
    Ok(differing as f64 / spec.num_edge_slots() as f64)
}

/// Serializes a genotype to the line-oriented text format:
/// a `cellspec` header, then one `<cell> <node> <slot> <source> <op>`
/// line per edge slot, LF-terminated.
pub fn serialize(g: &Genotype, spec: &CellSpec) -> String {
    let mut out = format!(
        "cellspec {} {} {} {} {}\n",
        spec.num_input_nodes(),
        spec.num_op_nodes(),
        spec.inputs_per_node(),
        spec.num_ops(),
        spec.num_cell_types()
    );
    for (cell, node, slot, edge) in g.edges() {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            cell, node, slot, edge.source, edge.op
        ));
    }
    out
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| Error::Parse {
        line,
        msg: format!("expected integer for {what}, got `{tok}`"),
    })
}

/// Parses the text format produced by [`serialize`], validating every
/// invariant against `spec`.
pub fn deserialize(text: &str, spec: &CellSpec) -> Result<Genotype> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 6 || toks[0] != "cellspec" {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header `cellspec <inputs> <B> <inputs_per_node> <K> <cell_types>`"
                .into(),
        });
    }
    let dims: Vec<usize> = toks[1..]
        .iter()
        .map(|t| parse_usize(t, 1, "header field"))
        .collect::<Result<_>>()?;
    let expected = [
        spec.num_input_nodes(),
        spec.num_op_nodes(),
        spec.inputs_per_node(),
        spec.num_ops(),
        spec.num_cell_types(),
    ];
    if dims != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header {dims:?} does not match spec {expected:?}"),
        });
    }

    let mut cells: Vec<Vec<Vec<Edge>>> = (0..spec.num_cell_types())
        .map(|_| {
            (0..spec.num_op_nodes())
                .map(|_| Vec::with_capacity(spec.inputs_per_node()))
                .collect()
        })
        .collect();

    let mut expected_slots = spec.edge_slots();
    let mut count = 0usize;
    for (i, raw) in lines {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 5 fields, got {}", toks.len()),
            });
        }
        let cell = parse_usize(toks[0], lineno, "cell type")?;
        let node = parse_usize(toks[1], lineno, "node")?;
        let slot = parse_usize(toks[2], lineno, "slot")?;
        let source = parse_usize(toks[3], lineno, "source")?;
        let op = parse_usize(toks[4], lineno, "op")?;
        match expected_slots.next() {
            Some((ec, en, es)) if (ec, en, es) == (cell, node, slot) => {}
            Some((ec, en, es)) => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!(
                        "edge slots out of order: expected ({ec} {en} {es}), got ({cell} {node} {slot})"
                    ),
                });
            }
            None => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "more edge lines than edge slots".into(),
                });
            }
        }
        if source >= spec.legal_sources(node) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!(
                    "source {} out of range [0, {})",
                    source,
                    spec.legal_sources(node)
                ),
            });
        }
        if op >= spec.num_ops() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("op {} out of range [0, {})", op, spec.num_ops()),
            });
        }
        cells[cell][node].push(Edge { source, op });
        count += 1;
    }
    if count != spec.num_edge_slots() {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!(
                "expected {} edge lines, got {}",
                spec.num_edge_slots(),
                count
            ),
        });
    }
    Ok(Genotype { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> CellSpec {
        // One op node, one slot, two ops: the smallest legal space.
        CellSpec::new(1, 1, 1, vec![Op::Zero, Op::Identity], 1).unwrap()
    }

    fn cnn_like_spec() -> CellSpec {
        CellSpec::new(
            2,
            4,
            2,
            vec![Op::Zero, Op::Identity, Op::Tanh, Op::Relu, Op::Sigmoid],
            2,
        )
        .unwrap()
    }

    #[test]
    fn spec_rejects_bad_dimensions() {
        assert!(CellSpec::new(0, 1, 1, vec![Op::Zero, Op::Tanh], 1).is_err());
        assert!(CellSpec::new(1, 0, 1, vec![Op::Zero, Op::Tanh], 1).is_err());
        assert!(CellSpec::new(1, 1, 3, vec![Op::Zero, Op::Tanh], 1).is_err());
        assert!(CellSpec::new(1, 1, 1, vec![Op::Zero], 1).is_err());
        assert!(CellSpec::new(1, 1, 1, vec![Op::Zero, Op::Tanh], 0).is_err());
    }

    #[test]
    fn edge_slot_count() {
        assert_eq!(cnn_like_spec().num_edge_slots(), 2 * 4 * 2);
        assert_eq!(tiny_spec().num_edge_slots(), 1);
    }

    #[test]
    fn random_genotype_single_choice_source_and_balanced_op() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut op_counts = [0usize; 2];
        for _ in 0..10_000 {
            let g = random_genotype(&spec, &mut rng);
            let e = g.edge(0, 0, 0);
            assert_eq!(e.source, 0);
            op_counts[e.op] += 1;
        }
        let f0 = op_counts[0] as f64 / 10_000.0;
        assert!((f0 - 0.5).abs() < 0.02, "op frequency {f0}");
    }

    #[test]
    fn random_genotype_deterministic_under_fixed_seed() {
        let spec = cnn_like_spec();
        let g1 = random_genotype(&spec, &mut ChaCha8Rng::seed_from_u64(42));
        let g2 = random_genotype(&spec, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(g1, g2);
    }

    #[test]
    fn random_genotype_always_valid() {
        let spec = cnn_like_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            random_genotype(&spec, &mut rng).validate(&spec).unwrap();
        }
    }

    #[test]
    fn random_genotype_per_slot_uniform_chi_square() {
        // Chi-square against uniform per slot; critical values at
        // alpha = 0.001 for the dfs that occur here.
        fn crit(df: usize) -> f64 {
            match df {
                1 => 10.83,
                2 => 13.82,
                3 => 16.27,
                4 => 18.47,
                _ => panic!("unexpected df {df}"),
            }
        }
        let spec = cnn_like_spec();
        let draws = 10_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = spec.num_edge_slots();
        let mut src_counts: Vec<Vec<usize>> = spec
            .edge_slots()
            .map(|(_, node, _)| vec![0; spec.legal_sources(node)])
            .collect();
        let mut op_counts: Vec<Vec<usize>> = vec![vec![0; spec.num_ops()]; e];
        for _ in 0..draws {
            let g = random_genotype(&spec, &mut rng);
            for (i, (_, _, _, edge)) in g.edges().enumerate() {
                src_counts[i][edge.source] += 1;
                op_counts[i][edge.op] += 1;
            }
        }
        let chi = |counts: &[usize]| {
            let k = counts.len();
            let expect = draws as f64 / k as f64;
            counts
                .iter()
                .map(|&c| {
                    let d = c as f64 - expect;
                    d * d / expect
                })
                .sum::<f64>()
        };
        for counts in &src_counts {
            if counts.len() >= 2 {
                assert!(chi(counts) < crit(counts.len() - 1));
            }
        }
        for counts in &op_counts {
            assert!(chi(counts) < crit(counts.len() - 1));
        }
    }

    #[test]
    fn lift_round_identity() {
        let spec = cnn_like_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1_000 {
            let g = random_genotype(&spec, &mut rng);
            let c = lift(&g, &spec);
            assert_eq!(round(&c, &spec).unwrap(), g);
        }
    }

    #[test]
    fn lift_layout_is_source_then_op() {
        let spec =
            CellSpec::new(1, 2, 1, vec![Op::Zero, Op::Identity, Op::Tanh, Op::Relu], 1).unwrap();
        let g = Genotype::new(
            vec![vec![
                vec![Edge { source: 0, op: 0 }],
                vec![Edge { source: 1, op: 3 }],
            ]],
            &spec,
        )
        .unwrap();
        let c = lift(&g, &spec);
        assert_eq!(c.values(), &[0.0, 0.0, 1.0, 3.0]);
        // op index 3 at slot 1 lands at flat position 3
        assert_eq!(c.values()[3], 3.0);
    }

    #[test]
    fn lift_all_zero_indices_gives_zero_vector() {
        let spec = cnn_like_spec();
        let cells = (0..2)
            .map(|_| (0..4).map(|_| vec![Edge { source: 0, op: 0 }; 2]).collect())
            .collect();
        let g = Genotype::new(cells, &spec).unwrap();
        assert!(lift(&g, &spec).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_clamps_out_of_range_values() {
        let spec = CellSpec::new(
            1,
            1,
            1,
            vec![Op::Zero, Op::Identity, Op::Tanh, Op::Relu, Op::Sigmoid],
            1,
        )
        .unwrap();
        let c = ContinuousArch::new(vec![-2.3, 7.9], &spec).unwrap();
        let g = round(&c, &spec).unwrap();
        assert_eq!(g.edge(0, 0, 0), Edge { source: 0, op: 4 });
    }

    #[test]
    fn round_halves_go_up() {
        let spec = CellSpec::new(
            1,
            1,
            1,
            vec![Op::Zero, Op::Identity, Op::Tanh, Op::Relu, Op::Sigmoid],
            1,
        )
        .unwrap();
        let c = ContinuousArch::new(vec![-0.5, 2.5], &spec).unwrap();
        let g = round(&c, &spec).unwrap();
        // -0.5 rounds to 0 (the larger integer), 2.5 rounds to 3.
        assert_eq!(g.edge(0, 0, 0), Edge { source: 0, op: 3 });
    }

    #[test]
    fn round_reports_non_finite_slot() {
        let spec = tiny_spec();
        let c = ContinuousArch::new(vec![0.0, f64::NAN], &spec).unwrap();
        match round(&c, &spec) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn round_is_idempotent_through_lift() {
        let spec = cnn_like_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let values: Vec<f64> = (0..2 * spec.num_edge_slots())
                .map(|_| rng.gen_range(-3.0..8.0))
                .collect();
            let c = ContinuousArch::new(values, &spec).unwrap();
            let g = round(&c, &spec).unwrap();
            assert_eq!(round(&lift(&g, &spec), &spec).unwrap(), g);
        }
    }

    #[test]
    fn distance_zero_on_self_and_exact_single_edge() {
        let spec = CellSpec::new(1, 4, 2, vec![Op::Zero, Op::Identity, Op::Tanh], 1).unwrap();
        assert_eq!(spec.num_edge_slots(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g1 = random_genotype(&spec, &mut rng);
        assert_eq!(distance(&g1, &g1, &spec).unwrap(), 0.0);

        let mut cells = g1.cells.clone();
        let old = cells[0][2][1].op;
        cells[0][2][1].op = (old + 1) % spec.num_ops();
        let g2 = Genotype::new(cells, &spec).unwrap();
        assert_eq!(distance(&g1, &g2, &spec).unwrap(), 0.125);
    }

    #[test]
    fn distance_matches_slot_comparison_oracle() {
        let spec = cnn_like_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1_000 {
            let g1 = random_genotype(&spec, &mut rng);
            let g2 = random_genotype(&spec, &mut rng);
            // Independent slot-by-slot comparison.
            let mut diff = 0usize;
            for (cell, node, slot) in spec.edge_slots() {
                let a = g1.edge(cell, node, slot);
                let b = g2.edge(cell, node, slot);
                if a.source != b.source || a.op != b.op {
                    diff += 1;
                }
            }
            let expected = diff as f64 / spec.num_edge_slots() as f64;
            assert_eq!(distance(&g1, &g2, &spec).unwrap(), expected);
        }
    }

    #[test]
    fn distance_is_a_metric_on_random_triples() {
        let spec = cnn_like_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2_000 {
            let a = random_genotype(&spec, &mut rng);
            let b = random_genotype(&spec, &mut rng);
            let c = random_genotype(&spec, &mut rng);
            let dab = distance(&a, &b, &spec).unwrap();
            let dba = distance(&b, &a, &spec).unwrap();
            let dac = distance(&a, &c, &spec).unwrap();
            let dbc = distance(&b, &c, &spec).unwrap();
            assert_eq!(dab, dba);
            assert!((0.0..=1.0).contains(&dab));
            assert_eq!(dab == 0.0, a == b);
            assert!(dac <= dab + dbc + 1e-12);
        }
    }

    #[test]
    fn distance_rejects_mismatched_spec() {
        let s1 = tiny_spec();
        let s2 = cnn_like_spec();
        let g1 = random_genotype(&s1, &mut ChaCha8Rng::seed_from_u64(1));
        let g2 = random_genotype(&s2, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(
            distance(&g1, &g2, &s1),
            Err(Error::SpecMismatch(_))
        ));
    }

    #[test]
    fn serialize_roundtrip_random() {
        let spec = cnn_like_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1_000 {
            let g = random_genotype(&spec, &mut rng);
            let text = serialize(&g, &spec);
            assert_eq!(deserialize(&text, &spec).unwrap(), g);
        }
    }

    #[test]
    fn deserialize_rejects_empty_and_out_of_range() {
        let spec = tiny_spec();
        assert!(matches!(
            deserialize("", &spec),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad = "cellspec 1 1 1 2 1\n0 0 0 0 9\n";
        match deserialize(bad, &spec) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("op 9"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn deserialize_rejects_wrong_header() {
        let spec = tiny_spec();
        let bad = "cellspec 2 1 1 2 1\n0 0 0 0 1\n";
        assert!(matches!(deserialize(bad, &spec), Err(Error::Parse { .. })));
    }

    #[test]
    fn op_parse_display_roundtrip() {
        for op in [Op::Zero, Op::Identity, Op::Tanh, Op::Relu, Op::Sigmoid] {
            assert_eq!(op.name().parse::<Op>().unwrap(), op);
        }
        assert!("conv3x3".parse::<Op>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn genotype_strategy() -> impl Strategy<Value = (CellSpec, Genotype)> {
            let spec = cnn_like_spec();
            let slot_strategies: Vec<BoxedStrategy<Edge>> = spec
                .edge_slots()
                .map(|(_, node, _)| {
                    (0..spec.legal_sources(node), 0..spec.num_ops())
                        .prop_map(|(source, op)| Edge { source, op })
                        .boxed()
                })
                .collect();
            slot_strategies.prop_map(move |edges| {
                let mut it = edges.into_iter();
                let cells = (0..spec.num_cell_types())
                    .map(|_| {
                        (0..spec.num_op_nodes())
                            .map(|_| {
                                (0..spec.inputs_per_node())
                                    .map(|_| it.next().expect("strategy covers all slots"))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                let g = Genotype::new(cells, &spec).expect("strategy respects ranges");
                (spec.clone(), g)
            })
        }

        proptest! {
            #[test]
            fn serialize_roundtrips((spec, g) in genotype_strategy()) {
                let text = serialize(&g, &spec);
                prop_assert_eq!(deserialize(&text, &spec).unwrap(), g);
            }

            #[test]
            fn round_inverts_lift((spec, g) in genotype_strategy()) {
                prop_assert_eq!(round(&lift(&g, &spec), &spec).unwrap(), g);
            }

            #[test]
            fn distance_symmetric_and_bounded(
                (spec, a) in genotype_strategy(),
                values in proptest::collection::vec(-4.0f64..9.0, 32),
            ) {
                // Second genotype comes from rounding an arbitrary
                // continuous vector, exercising clamping too.
                let c = ContinuousArch::new(values, &spec).unwrap();
                let b = round(&c, &spec).unwrap();
                let dab = distance(&a, &b, &spec).unwrap();
                prop_assert_eq!(dab, distance(&b, &a, &spec).unwrap());
                prop_assert!((0.0..=1.0).contains(&dab));
                prop_assert_eq!(dab == 0.0, a == b);
            }
        }
    }
}
