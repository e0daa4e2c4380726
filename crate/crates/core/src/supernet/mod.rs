//! Desk-scale single-path weight-sharing supernet.
//!
//! The supernet holds one affine block per (cell type, op node, input
//! slot, candidate source, candidate non-zero op) combination plus shared
//! input projections, an output projection, and a classifier head. A
//! forward or training step touches only the blocks selected by one
//! genotype; everything else is left bit-identical.
//!
//! Cells are chained: the first cell's input nodes project the raw
//! sample, later cells read the previous cell's output. A node applies
//! `op(W * source + b)` per input slot and sums its slots; the cell
//! output is the sum of all op-node outputs; the classifier head runs
//! softmax cross-entropy on the last cell's projected output.

pub mod dataset;
pub mod math;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{CellSpec, Genotype, Op};
use crate::error::{Error, Result};

pub use dataset::{make_dataset, Batch, MicroDataset, Split, SplitSizes};
pub use math::{Affine, Mat};

/// Identifies one shared block: (cell type, op node, input slot, source, op index).
pub type EdgeKey = (usize, usize, usize, usize, usize);

/// All shared parameters of the supernet.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedWeights {
    spec: CellSpec,
    hidden_dim: usize,
    input_dim: usize,
    num_classes: usize,
    init_seed: u64,
    input_proj: Vec<Affine>,
    blocks: BTreeMap<EdgeKey, Affine>,
    output_proj: Affine,
    head: Affine,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Affine {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Mat::zeros(rows, cols);
    for v in m.data.iter_mut() {
        *v = rng.gen_range(-a..a);
    }
    Affine {
        w: m,
        b: vec![0.0; rows],
    }
}

impl SharedWeights {
    /// Seeded initialization: matrices uniform in `[-a, a]` with
    /// `a = sqrt(6 / (fan_in + fan_out))`, biases zero. Blocks are drawn
    /// in canonical key order so the layout is reproducible.
    pub fn init(
        spec: &CellSpec,
        hidden_dim: usize,
        input_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if hidden_dim < 1 || input_dim < 1 || num_classes < 2 {
            return Err(Error::InvalidConfig(
                "need hidden_dim >= 1, input_dim >= 1, num_classes >= 2".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_proj: Vec<Affine> = (0..spec.num_input_nodes())
            .map(|_| glorot(hidden_dim, input_dim, &mut rng))
            .collect();
        let mut blocks = BTreeMap::new();
        for (cell, node, slot) in spec.edge_slots() {
            for source in 0..spec.legal_sources(node) {
                for (op_idx, op) in spec.ops().iter().enumerate() {
                    if *op == Op::Zero {
                        continue;
                    }
                    blocks.insert(
                        (cell, node, slot, source, op_idx),
                        glorot(hidden_dim, hidden_dim, &mut rng),
                    );
                }
            }
        }
        let output_proj = glorot(hidden_dim, hidden_dim, &mut rng);
        let head = glorot(num_classes, hidden_dim, &mut rng);
        Ok(SharedWeights {
            spec: spec.clone(),
            hidden_dim,
            input_dim,
            num_classes,
            init_seed: seed,
            input_proj,
            blocks,
            output_proj,
            head,
        })
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn blocks_iter(&self) -> impl Iterator<Item = (&EdgeKey, &Affine)> {
        self.blocks.iter()
    }

    /// Block keys selected by `g` (its non-zero edges).
    pub fn active_keys(&self, g: &Genotype) -> Vec<EdgeKey> {
        g.edges()
            .filter(|(_, _, _, e)| self.spec.ops()[e.op] != Op::Zero)
            .map(|(cell, node, slot, e)| (cell, node, slot, e.source, e.op))
            .collect()
    }

    fn batch_check(&self, batch: &Batch<'_>) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::DimensionMismatch("batch is empty".into()));
        }
        for x in batch.inputs {
            if x.len() != self.input_dim {
                return Err(Error::DimensionMismatch(format!(
                    "input has dim {}, supernet expects {}",
                    x.len(),
                    self.input_dim
                )));
            }
        }
        for &y in batch.labels {
            if y >= self.num_classes {
                return Err(Error::DimensionMismatch(format!(
                    "label {y} out of range [0, {})",
                    self.num_classes
                )));
            }
        }
        if batch.inputs.len() != batch.labels.len() {
            return Err(Error::DimensionMismatch(
                "inputs and labels differ in length".into(),
            ));
        }
        Ok(())
    }

    fn forward_sample(&self, g: &Genotype, x: &[f64]) -> Result<SampleTrace> {
        let cells = self.spec.num_cell_types();
        let nodes = self.spec.num_op_nodes();
        let slots = self.spec.inputs_per_node();
        let inputs = self.spec.num_input_nodes();
        let mut trace = SampleTrace {
            input_nodes: Vec::with_capacity(cells),
            preacts: vec![vec![vec![None; slots]; nodes]; cells],
            node_out: Vec::with_capacity(cells),
            cell_out: Vec::with_capacity(cells),
            feature: Vec::new(),
            logp: Vec::new(),
        };
        for cell in 0..cells {
            let input_nodes: Vec<Vec<f64>> = (0..inputs)
                .map(|i| {
                    if cell == 0 {
                        self.input_proj[i].apply(x)
                    } else {
                        trace.cell_out[cell - 1].clone()
                    }
                })
                .collect();
            let mut node_out: Vec<Vec<f64>> = Vec::with_capacity(nodes);
            for node in 0..nodes {
                let mut acc = vec![0.0; self.hidden_dim];
                for slot in 0..slots {
                    let edge = g.edge(cell, node, slot);
                    let op = self.spec.ops()[edge.op];
                    if op == Op::Zero {
                        continue;
                    }
                    let src: &[f64] = if edge.source < inputs {
                        &input_nodes[edge.source]
                    } else {
                        &node_out[edge.source - inputs]
                    };
                    let key = (cell, node, slot, edge.source, edge.op);
                    let block = self.blocks.get(&key).ok_or_else(|| {
                        Error::SpecMismatch(format!("no block for edge key {key:?}"))
                    })?;
                    let z = block.apply(src);
                    for (a, zi) in acc.iter_mut().zip(&z) {
                        *a += activate(op, *zi);
                    }
                    trace.preacts[cell][node][slot] = Some(z);
                }
                node_out.push(acc);
            }
            let mut cell_out = vec![0.0; self.hidden_dim];
            for out in &node_out {
                math::add_in_place(&mut cell_out, out);
            }
            trace.input_nodes.push(input_nodes);
            trace.node_out.push(node_out);
            trace.cell_out.push(cell_out);
        }
        trace.feature = self.output_proj.apply(trace.cell_out.last().unwrap());
        let logits = self.head.apply(&trace.feature);
        trace.logp = math::log_softmax(&logits);
        Ok(trace)
    }

    /// Loss, top-1 accuracy, and an activation trace for one genotype on
    /// one batch. Touches only blocks on the active path; mutates nothing.
    pub fn forward(&self, g: &Genotype, batch: &Batch<'_>) -> Result<ForwardOutput> {
        g.validate(&self.spec)
            .map_err(|e| Error::SpecMismatch(e.to_string()))?;
        self.batch_check(batch)?;
        let cells = self.spec.num_cell_types();
        let nodes = self.spec.num_op_nodes();
        let mut loss = 0.0;
        let mut correct = 0usize;
        let mut node_mean_abs = vec![vec![0.0; nodes]; cells];
        let n = batch.len() as f64;
        for (x, &y) in batch.inputs.iter().zip(batch.labels) {
            let trace = self.forward_sample(g, x)?;
            loss += -trace.logp[y];
            if math::argmax(&trace.logp) == y {
                correct += 1;
            }
            for (acc_cell, out_cell) in node_mean_abs.iter_mut().zip(&trace.node_out) {
                for (acc, out) in acc_cell.iter_mut().zip(out_cell) {
                    let mean_abs: f64 =
                        out.iter().map(|v| v.abs()).sum::<f64>() / self.hidden_dim as f64;
                    *acc += mean_abs / n;
                }
            }
        }
        Ok(ForwardOutput {
            loss: loss / n,
            accuracy: correct as f64 / n,
            trace: ActivationTrace { node_mean_abs },
        })
    }

    /// Mean cross-entropy loss and its gradient over the active path.
    pub fn loss_and_grad(&self, g: &Genotype, batch: &Batch<'_>) -> Result<(f64, ActiveGrads)> {
        g.validate(&self.spec)
            .map_err(|e| Error::SpecMismatch(e.to_string()))?;
        self.batch_check(batch)?;
        let inputs = self.spec.num_input_nodes();
        let nodes = self.spec.num_op_nodes();
        let slots = self.spec.inputs_per_node();
        let cells = self.spec.num_cell_types();

        let mut grads = ActiveGrads {
            input_proj: (0..inputs)
                .map(|_| Affine::zeros(self.hidden_dim, self.input_dim))
                .collect(),
            blocks: self
                .active_keys(g)
                .into_iter()
                .map(|k| (k, Affine::zeros(self.hidden_dim, self.hidden_dim)))
                .collect(),
            output_proj: Affine::zeros(self.hidden_dim, self.hidden_dim),
            head: Affine::zeros(self.num_classes, self.hidden_dim),
        };

        let n = batch.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in batch.inputs.iter().zip(batch.labels) {
            let trace = self.forward_sample(g, x)?;
            loss += -trace.logp[y] / n;

            // d loss / d logits, already scaled by 1/n.
            let mut dlogits: Vec<f64> = trace.logp.iter().map(|lp| lp.exp() / n).collect();
            dlogits[y] -= 1.0 / n;

            grads.head.w.add_outer(&dlogits, &trace.feature);
            math::add_in_place(&mut grads.head.b, &dlogits);
            let dfeature = self.head.w.matvec_t(&dlogits);

            let last = cells - 1;
            grads
                .output_proj
                .w
                .add_outer(&dfeature, &trace.cell_out[last]);
            math::add_in_place(&mut grads.output_proj.b, &dfeature);

            let mut dcell: Vec<Vec<f64>> = vec![vec![0.0; self.hidden_dim]; cells];
            dcell[last] = self.output_proj.w.matvec_t(&dfeature);

            for cell in (0..cells).rev() {
                let mut dnode: Vec<Vec<f64>> = vec![dcell[cell].clone(); nodes];
                let mut dinp: Vec<Vec<f64>> = vec![vec![0.0; self.hidden_dim]; inputs];
                for node in (0..nodes).rev() {
                    for slot in 0..slots {
                        let edge = g.edge(cell, node, slot);
                        let op = self.spec.ops()[edge.op];
                        if op == Op::Zero {
                            continue;
                        }
                        let z = trace.preacts[cell][node][slot]
                            .as_ref()
                            .expect("active edge has a stored pre-activation");
                        let dz: Vec<f64> = dnode[node]
                            .iter()
                            .zip(z)
                            .map(|(d, zi)| d * activate_grad(op, *zi))
                            .collect();
                        let key = (cell, node, slot, edge.source, edge.op);
                        let src: &[f64] = if edge.source < inputs {
                            &trace.input_nodes[cell][edge.source]
                        } else {
                            &trace.node_out[cell][edge.source - inputs]
                        };
                        {
                            let gb = grads.blocks.get_mut(&key).expect("active key present");
                            gb.w.add_outer(&dz, src);
                            math::add_in_place(&mut gb.b, &dz);
                        }
                        let dsrc = self.blocks[&key].w.matvec_t(&dz);
                        if edge.source < inputs {
                            math::add_in_place(&mut dinp[edge.source], &dsrc);
                        } else {
                            math::add_in_place(&mut dnode[edge.source - inputs], &dsrc);
                        }
                    }
                }
                if cell == 0 {
                    for (proj, di) in grads.input_proj.iter_mut().zip(&dinp) {
                        proj.w.add_outer(di, x);
                        math::add_in_place(&mut proj.b, di);
                    }
                } else {
                    for di in &dinp {
                        math::add_in_place(&mut dcell[cell - 1], di);
                    }
                }
            }
        }
        Ok((loss, grads))
    }

    /// One SGD step on the active path: `param -= lr * grad` for every
    /// block selected by `g` plus the shared projections and head.
    /// Inactive blocks are untouched. Returns the pre-update batch loss.
    pub fn train_step(&mut self, g: &Genotype, batch: &Batch<'_>, lr: f64) -> Result<f64> {
        let lr_ok = lr.is_finite() && lr > 0.0;
        if !lr_ok {
            return Err(Error::InvalidConfig(
                "learning rate must be finite and > 0".into(),
            ));
        }
        let (loss, grads) = self.loss_and_grad(g, batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("batch loss {loss}")));
        }
        grads.check_finite()?;
        for (proj, gp) in self.input_proj.iter_mut().zip(&grads.input_proj) {
            apply_sgd(proj, gp, lr);
        }
        for (key, gb) in &grads.blocks {
            apply_sgd(
                self.blocks.get_mut(key).expect("active key present"),
                gb,
                lr,
            );
        }
        apply_sgd(&mut self.output_proj, &grads.output_proj, lr);
        apply_sgd(&mut self.head, &grads.head, lr);
        Ok(loss)
    }

    /// Mean of per-batch top-1 accuracies with weights read straight from
    /// the supernet. Pure: trains nothing.
    pub fn inherited_accuracy(&self, g: &Genotype, batches: &[Batch<'_>]) -> Result<f64> {
        if batches.is_empty() {
            return Err(Error::DimensionMismatch("no validation batches".into()));
        }
        let mut total = 0.0;
        for batch in batches {
            total += self.forward(g, batch)?.accuracy;
        }
        Ok(total / batches.len() as f64)
    }

    /// Deterministic list of the parameters a training step on `g` may
    /// touch, in a stable order.
    pub fn active_param_ids(&self, g: &Genotype) -> Vec<ParamId> {
        let mut out = Vec::new();
        for (i, proj) in self.input_proj.iter().enumerate() {
            for r in 0..proj.w.rows {
                for c in 0..proj.w.cols {
                    out.push(ParamId::InputProjW { node: i, r, c });
                }
            }
            for r in 0..proj.b.len() {
                out.push(ParamId::InputProjB { node: i, r });
            }
        }
        for key in self.active_keys(g) {
            let block = &self.blocks[&key];
            for r in 0..block.w.rows {
                for c in 0..block.w.cols {
                    out.push(ParamId::BlockW { key, r, c });
                }
            }
            for r in 0..block.b.len() {
                out.push(ParamId::BlockB { key, r });
            }
        }
        for r in 0..self.output_proj.w.rows {
            for c in 0..self.output_proj.w.cols {
                out.push(ParamId::OutputProjW { r, c });
            }
        }
        for r in 0..self.output_proj.b.len() {
            out.push(ParamId::OutputProjB { r });
        }
        for r in 0..self.head.w.rows {
            for c in 0..self.head.w.cols {
                out.push(ParamId::HeadW { r, c });
            }
        }
        for r in 0..self.head.b.len() {
            out.push(ParamId::HeadB { r });
        }
        out
    }

    pub fn get_param(&self, id: ParamId) -> f64 {
        match id {
            ParamId::InputProjW { node, r, c } => self.input_proj[node].w.get(r, c),
            ParamId::InputProjB { node, r } => self.input_proj[node].b[r],
            ParamId::BlockW { key, r, c } => self.blocks[&key].w.get(r, c),
            ParamId::BlockB { key, r } => self.blocks[&key].b[r],
            ParamId::OutputProjW { r, c } => self.output_proj.w.get(r, c),
            ParamId::OutputProjB { r } => self.output_proj.b[r],
            ParamId::HeadW { r, c } => self.head.w.get(r, c),
            ParamId::HeadB { r } => self.head.b[r],
        }
    }

    pub fn set_param(&mut self, id: ParamId, v: f64) {
        match id {
            ParamId::InputProjW { node, r, c } => self.input_proj[node].w.set(r, c, v),
            ParamId::InputProjB { node, r } => self.input_proj[node].b[r] = v,
            ParamId::BlockW { key, r, c } => self
                .blocks
                .get_mut(&key)
                .expect("block exists")
                .w
                .set(r, c, v),
            ParamId::BlockB { key, r } => self.blocks.get_mut(&key).expect("block exists").b[r] = v,
            ParamId::OutputProjW { r, c } => self.output_proj.w.set(r, c, v),
            ParamId::OutputProjB { r } => self.output_proj.b[r] = v,
            ParamId::HeadW { r, c } => self.head.w.set(r, c, v),
            ParamId::HeadB { r } => self.head.b[r] = v,
        }
    }

    /// Whether `id` belongs to a relu block whose pre-activation gets
    /// within `margin` of the kink on this batch. Finite differences are
    /// invalid there.
    pub fn near_relu_kink(
        &self,
        g: &Genotype,
        batch: &Batch<'_>,
        id: ParamId,
        margin: f64,
    ) -> Result<bool> {
        let key = match id {
            ParamId::BlockW { key, .. } | ParamId::BlockB { key, .. } => key,
            _ => return Ok(false),
        };
        if self.spec.ops()[key.4] != Op::Relu {
            return Ok(false);
        }
        for x in batch.inputs {
            let trace = self.forward_sample(g, x)?;
            if let Some(z) = &trace.preacts[key.0][key.1][key.2] {
                if z.iter().any(|zi| zi.abs() < margin) {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Writes a versioned JSON checkpoint carrying the spec hash, the
    /// init seed, and every parameter block.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let doc = CheckpointDoc {
            version: 1,
            spec_hash: self.spec.spec_hash(),
            init_seed: self.init_seed,
            hidden_dim: self.hidden_dim,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            input_proj: self.input_proj.clone(),
            blocks: self.blocks.iter().map(|(k, v)| (*k, v.clone())).collect(),
            output_proj: self.output_proj.clone(),
            head: self.head.clone(),
        };
        let text = serde_json::to_string(&doc)?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Loads a checkpoint, refusing one written for a different spec.
    pub fn load_checkpoint(path: &Path, spec: &CellSpec) -> Result<SharedWeights> {
        let text = fs::read_to_string(path)?;
        let doc: CheckpointDoc = serde_json::from_str(&text)?;
        let expected = spec.spec_hash();
        if doc.spec_hash != expected {
            return Err(Error::SpecHashMismatch {
                found: doc.spec_hash,
                expected,
            });
        }
        Ok(SharedWeights {
            spec: spec.clone(),
            hidden_dim: doc.hidden_dim,
            input_dim: doc.input_dim,
            num_classes: doc.num_classes,
            init_seed: doc.init_seed,
            input_proj: doc.input_proj,
            blocks: doc.blocks.into_iter().collect(),
            output_proj: doc.output_proj,
            head: doc.head,
        })
    }
}

fn apply_sgd(param: &mut Affine, grad: &Affine, lr: f64) {
    for (p, g) in param.w.data.iter_mut().zip(&grad.w.data) {
        *p -= lr * g;
    }
    for (p, g) in param.b.iter_mut().zip(&grad.b) {
        *p -= lr * g;
    }
}

fn activate(op: Op, z: f64) -> f64 {
    match op {
        Op::Zero => 0.0,
        Op::Identity => z,
        Op::Tanh => z.tanh(),
        Op::Relu => z.max(0.0),
        Op::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

fn activate_grad(op: Op, z: f64) -> f64 {
    match op {
        Op::Zero => 0.0,
        Op::Identity => 1.0,
        Op::Tanh => {
            let t = z.tanh();
            1.0 - t * t
        }
        Op::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Op::Sigmoid => {
            let s = 1.0 / (1.0 + (-z).exp());
            s * (1.0 - s)
        }
    }
}

struct SampleTrace {
    input_nodes: Vec<Vec<Vec<f64>>>,
    preacts: Vec<Vec<Vec<Option<Vec<f64>>>>>,
    node_out: Vec<Vec<Vec<f64>>>,
    cell_out: Vec<Vec<f64>>,
    feature: Vec<f64>,
    logp: Vec<f64>,
}

/// Mean absolute node activations, per cell type and op node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTrace {
    pub node_mean_abs: Vec<Vec<f64>>,
}

impl ActivationTrace {
    pub fn all_finite(&self) -> bool {
        self.node_mean_abs
            .iter()
            .all(|c| c.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub loss: f64,
    pub accuracy: f64,
    pub trace: ActivationTrace,
}

/// Gradients for one training step: the active blocks plus the always
/// shared projections and head.
#[derive(Debug, Clone)]
pub struct ActiveGrads {
    pub input_proj: Vec<Affine>,
    pub blocks: BTreeMap<EdgeKey, Affine>,
    pub output_proj: Affine,
    pub head: Affine,
}

impl ActiveGrads {
    pub fn get(&self, id: ParamId) -> f64 {
        match id {
            ParamId::InputProjW { node, r, c } => self.input_proj[node].w.get(r, c),
            ParamId::InputProjB { node, r } => self.input_proj[node].b[r],
            ParamId::BlockW { key, r, c } => self.blocks[&key].w.get(r, c),
            ParamId::BlockB { key, r } => self.blocks[&key].b[r],
            ParamId::OutputProjW { r, c } => self.output_proj.w.get(r, c),
            ParamId::OutputProjB { r } => self.output_proj.b[r],
            ParamId::HeadW { r, c } => self.head.w.get(r, c),
            ParamId::HeadB { r } => self.head.b[r],
        }
    }

    fn check_finite(&self) -> Result<()> {
        let ok = self.input_proj.iter().all(Affine::is_finite)
            && self.blocks.values().all(Affine::is_finite)
            && self.output_proj.is_finite()
            && self.head.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::NonFiniteLoss("gradient is non-finite".into()))
        }
    }
}

/// Addresses a single scalar parameter of the supernet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamId {
    InputProjW { node: usize, r: usize, c: usize },
    InputProjB { node: usize, r: usize },
    BlockW { key: EdgeKey, r: usize, c: usize },
    BlockB { key: EdgeKey, r: usize },
    OutputProjW { r: usize, c: usize },
    OutputProjB { r: usize },
    HeadW { r: usize, c: usize },
    HeadB { r: usize },
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    spec_hash: u64,
    init_seed: u64,
    hidden_dim: usize,
    input_dim: usize,
    num_classes: usize,
    input_proj: Vec<Affine>,
    blocks: Vec<(EdgeKey, Affine)>,
    output_proj: Affine,
    head: Affine,
}
