//! Controller-only evaluation backends: deterministic synthetic
//! accuracy landscapes and exhaustive enumeration of tiny spaces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{self, fnv1a, CellSpec, Edge, Genotype};
use crate::error::{Error, Result};

/// Default cap on exhaustive enumeration.
pub const DEFAULT_ENUM_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// Seeded pseudo-random base values smoothed over one-edge neighbors.
    HashSmooth,
    /// A wide low local basin plus a narrow high global basin.
    Deceptive,
}

/// Serializable oracle description, echoed into experiment results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub mode: OracleMode,
    pub seed: u64,
    /// Weight of the per-slot (separable) hash component of the
    /// hash-smooth base value; the rest is a whole-genotype hash.
    /// Higher values give a cleaner global ridge.
    pub slot_bias: f64,
    pub local_peak: f64,
    pub local_width: f64,
    pub global_peak: f64,
    pub global_width: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            mode: OracleMode::HashSmooth,
            seed: 0,
            slot_bias: 0.75,
            local_peak: 0.45,
            local_width: 0.5,
            global_peak: 0.95,
            global_width: 0.3,
        }
    }
}

/// One Gaussian-of-distance scoring basin.
#[derive(Debug, Clone)]
pub struct Basin {
    pub center: Genotype,
    pub width: f64,
    pub peak: f64,
}

/// Pure deterministic genotype-to-accuracy function.
#[derive(Debug, Clone)]
pub struct TabularOracle {
    spec: CellSpec,
    mode: OracleMode,
    seed: u64,
    basins: Vec<Basin>,
    config: OracleConfig,
}

impl TabularOracle {
    pub fn from_config(spec: &CellSpec, config: &OracleConfig) -> Result<Self> {
        match config.mode {
            OracleMode::HashSmooth => Ok(TabularOracle {
                spec: spec.clone(),
                mode: OracleMode::HashSmooth,
                seed: config.seed,
                basins: Vec::new(),
                config: *config,
            }),
            OracleMode::Deceptive => {
                if !(config.local_width > 0.0 && config.global_width > 0.0) {
                    return Err(Error::InvalidConfig("basin widths must be > 0".into()));
                }
                if !(config.global_peak > config.local_peak && config.local_peak > 0.0) {
                    return Err(Error::InvalidConfig(
                        "need 0 < local_peak < global_peak".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                let local_center = arch::random_genotype(spec, &mut rng);
                // Put the global basin as far from the local one as a
                // modest candidate scan finds; strict improvement keeps
                // the pick deterministic.
                let mut global_center = arch::random_genotype(spec, &mut rng);
                let mut best = arch::distance(&local_center, &global_center, spec)?;
                for _ in 0..500 {
                    let cand = arch::random_genotype(spec, &mut rng);
                    let d = arch::distance(&local_center, &cand, spec)?;
                    if d > best {
                        best = d;
                        global_center = cand;
                    }
                }
                Ok(TabularOracle {
                    spec: spec.clone(),
                    mode: OracleMode::Deceptive,
                    seed: config.seed,
                    basins: vec![
                        Basin {
                            center: local_center,
                            width: config.local_width,
                            peak: config.local_peak,
                        },
                        Basin {
                            center: global_center,
                            width: config.global_width,
                            peak: config.global_peak,
                        },
                    ],
                    config: *config,
                })
            }
        }
    }

    pub fn hash_smooth(spec: &CellSpec, seed: u64) -> Result<Self> {
        TabularOracle::from_config(
            spec,
            &OracleConfig {
                mode: OracleMode::HashSmooth,
                seed,
                ..OracleConfig::default()
            },
        )
    }

    pub fn deceptive(spec: &CellSpec, seed: u64) -> Result<Self> {
        TabularOracle::from_config(
            spec,
            &OracleConfig {
                mode: OracleMode::Deceptive,
                seed,
                ..OracleConfig::default()
            },
        )
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn basins(&self) -> &[Basin] {
        &self.basins
    }

    /// Index of the highest-peak basin (the global optimum's basin).
    pub fn global_basin_index(&self) -> Option<usize> {
        self.basins
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.peak.partial_cmp(&b.1.peak).expect("finite peaks"))
            .map(|(i, _)| i)
    }

    /// Base score: a per-slot hash mean (weight `slot_bias`) blended with
    /// a whole-genotype hash. The separable part survives neighbor
    /// averaging, so the smoothed landscape keeps one clear ridge while
    /// the genotype hash adds local texture.
    fn base_value(&self, g: &Genotype) -> f64 {
        let to_unit = |h: u64| (h >> 11) as f64 / (1u64 << 53) as f64;
        let mut whole = Vec::with_capacity(16 + 16 * self.spec.num_edge_slots());
        whole.extend_from_slice(&self.seed.to_le_bytes());
        let mut slot_sum = 0.0;
        let mut slots = 0usize;
        for (i, (_, _, _, e)) in g.edges().enumerate() {
            whole.extend_from_slice(&(e.source as u64).to_le_bytes());
            whole.extend_from_slice(&(e.op as u64).to_le_bytes());
            let mut per_slot = Vec::with_capacity(32);
            per_slot.extend_from_slice(&self.seed.to_le_bytes());
            per_slot.extend_from_slice(&(i as u64).to_le_bytes());
            per_slot.extend_from_slice(&(e.source as u64).to_le_bytes());
            per_slot.extend_from_slice(&(e.op as u64).to_le_bytes());
            slot_sum += to_unit(fnv1a(&per_slot));
            slots += 1;
        }
        let w = self.config.slot_bias;
        w * slot_sum / slots as f64 + (1.0 - w) * to_unit(fnv1a(&whole))
    }

    /// All genotypes differing from `g` in exactly one slot field
    /// (one source or one op changed to another legal value).
    fn one_edge_neighbors(&self, g: &Genotype) -> Vec<Genotype> {
        let base: Vec<Edge> = g.edges().map(|(_, _, _, e)| e).collect();
        let nodes: Vec<usize> = g.edges().map(|(_, node, _, _)| node).collect();
        let mut out = Vec::new();
        let variant = |i: usize, edge: Edge| {
            let mut edges = base.clone();
            edges[i] = edge;
            genotype_from_flat(&self.spec, &edges)
        };
        for (i, edge) in base.iter().enumerate() {
            for source in 0..self.spec.legal_sources(nodes[i]) {
                if source != edge.source {
                    out.push(variant(
                        i,
                        Edge {
                            source,
                            op: edge.op,
                        },
                    ));
                }
            }
            for op in 0..self.spec.num_ops() {
                if op != edge.op {
                    out.push(variant(
                        i,
                        Edge {
                            source: edge.source,
                            op,
                        },
                    ));
                }
            }
        }
        out
    }

    /// Evaluates a genotype, deterministically, in `[0, 1]`.
    pub fn eval(&self, g: &Genotype) -> Result<f64> {
        g.validate(&self.spec)
            .map_err(|e| Error::SpecMismatch(e.to_string()))?;
        match self.mode {
            OracleMode::HashSmooth => {
                let mut total = self.base_value(g);
                let neighbors = self.one_edge_neighbors(g);
                let count = 1 + neighbors.len();
                for n in &neighbors {
                    total += self.base_value(n);
                }
                Ok(total / count as f64)
            }
            OracleMode::Deceptive => {
                let mut best = 0.0f64;
                for basin in &self.basins {
                    let d = arch::distance(g, &basin.center, &self.spec)?;
                    let v = basin.peak * (-(d / basin.width).powi(2)).exp();
                    best = best.max(v);
                }
                Ok(best)
            }
        }
    }

    /// Which basin attains the max in the score; first wins ties.
    /// Errors for non-deceptive oracles.
    pub fn dominant_basin(&self, g: &Genotype) -> Result<usize> {
        if self.basins.is_empty() {
            return Err(Error::InvalidConfig(
                "dominant_basin requires a deceptive oracle".into(),
            ));
        }
        let mut best_idx = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, basin) in self.basins.iter().enumerate() {
            let d = arch::distance(g, &basin.center, &self.spec)?;
            let v = basin.peak * (-(d / basin.width).powi(2)).exp();
            if v > best_val {
                best_val = v;
                best_idx = i;
            }
        }
        Ok(best_idx)
    }
}

/// Builds a genotype from edges listed in canonical slot order.
pub(crate) fn genotype_from_flat(spec: &CellSpec, edges: &[Edge]) -> Genotype {
    let mut it = edges.iter();
    let cells: Vec<Vec<Vec<Edge>>> = (0..spec.num_cell_types())
        .map(|_| {
            (0..spec.num_op_nodes())
                .map(|_| {
                    (0..spec.inputs_per_node())
                        .map(|_| *it.next().expect("edge count matches slot count"))
                        .collect()
                })
                .collect()
        })
        .collect();
    Genotype::new(cells, spec).expect("edges are within range")
}

/// Number of genotypes in the space: the product over edge slots of
/// (legal sources x ops).
pub fn space_size(spec: &CellSpec) -> u128 {
    let mut total: u128 = 1;
    for (_, node, _) in spec.edge_slots() {
        total = total.saturating_mul((spec.legal_sources(node) * spec.num_ops()) as u128);
    }
    total
}

/// Streams every genotype exactly once, in deterministic odometer order
/// (last slot fastest; within a slot, op fastest). Errors if the space
/// exceeds `cap`.
pub fn enumerate_capped(spec: &CellSpec, cap: u128) -> Result<GenotypeEnumeration> {
    let count = space_size(spec);
    if count > cap {
        return Err(Error::SpaceTooLarge { count, cap });
    }
    let slots: Vec<(usize, usize)> = spec
        .edge_slots()
        .map(|(_, node, _)| (spec.legal_sources(node), spec.num_ops()))
        .collect();
    Ok(GenotypeEnumeration {
        spec: spec.clone(),
        digits: vec![Edge { source: 0, op: 0 }; slots.len()],
        slots,
        done: false,
    })
}

/// [`enumerate_capped`] with the default cap.
pub fn enumerate(spec: &CellSpec) -> Result<GenotypeEnumeration> {
    enumerate_capped(spec, DEFAULT_ENUM_CAP)
}

#[derive(Debug)]
pub struct GenotypeEnumeration {
    spec: CellSpec,
    slots: Vec<(usize, usize)>,
    digits: Vec<Edge>,
    done: bool,
}

impl Iterator for GenotypeEnumeration {
    type Item = Genotype;

    fn next(&mut self) -> Option<Genotype> {
        if self.done {
            return None;
        }
        let g = genotype_from_flat(&self.spec, &self.digits);
        // Odometer increment, op fastest within the last slot.
        let mut i = self.slots.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            let (sources, ops) = self.slots[i];
            let d = &mut self.digits[i];
            d.op += 1;
            if d.op < ops {
                break;
            }
            d.op = 0;
            d.source += 1;
            if d.source < sources {
                break;
            }
            d.source = 0;
        }
        Some(g)
    }
}

/// Exhaustive argmax with first-in-enumeration-order tie-break.
pub fn brute_force_argmax<F>(spec: &CellSpec, mut eval: F, cap: u128) -> Result<(Genotype, f64)>
where
    F: FnMut(&Genotype) -> Result<f64>,
{
    let mut best: Option<(Genotype, f64)> = None;
    for g in enumerate_capped(spec, cap)? {
        let v = eval(&g)?;
        match &best {
            Some((_, bv)) if v <= *bv => {}
            _ => best = Some((g, v)),
        }
    }
    Ok(best.expect("space has at least one genotype"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Op;
    use std::collections::HashSet;

    fn count_spec() -> CellSpec {
        // slot 0 has 1 legal source, slot 1 has 2; K = 2:
        // count = (1*2) * (2*2) = 8.
        CellSpec::new(1, 2, 1, vec![Op::Zero, Op::Identity], 1).unwrap()
    }

    fn small_spec() -> CellSpec {
        CellSpec::new(1, 3, 1, vec![Op::Zero, Op::Identity, Op::Tanh], 1).unwrap()
    }

    #[test]
    fn enumeration_count_matches_closed_form() {
        let spec = count_spec();
        assert_eq!(space_size(&spec), 8);
        let all: Vec<Genotype> = enumerate(&spec).unwrap().collect();
        assert_eq!(all.len(), 8);
    }

    #[test]
    fn enumeration_has_no_duplicates_and_all_valid() {
        let spec = small_spec();
        let expected = space_size(&spec) as usize;
        let mut seen = HashSet::new();
        let mut count = 0usize;
        for g in enumerate(&spec).unwrap() {
            g.validate(&spec).unwrap();
            assert!(seen.insert(format!("{g:?}")), "duplicate genotype");
            count += 1;
        }
        assert_eq!(count, expected);
    }

    #[test]
    fn enumeration_cap_reports_exact_count() {
        let spec = small_spec();
        match enumerate_capped(&spec, 5) {
            Err(Error::SpaceTooLarge { count, cap }) => {
                assert_eq!(count, space_size(&spec));
                assert_eq!(cap, 5);
            }
            other => panic!("expected SpaceTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn argmax_constant_eval_returns_first() {
        let spec = count_spec();
        let first = enumerate(&spec).unwrap().next().unwrap();
        let (g, v) = brute_force_argmax(&spec, |_| Ok(0.5), DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(g, first);
        assert_eq!(v, 0.5);
    }

    #[test]
    fn hash_smooth_is_pure_and_in_range() {
        let spec = small_spec();
        let oracle = TabularOracle::hash_smooth(&spec, 99).unwrap();
        let oracle2 = TabularOracle::hash_smooth(&spec, 99).unwrap();
        for g in enumerate(&spec).unwrap() {
            let v = oracle.eval(&g).unwrap();
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(v, oracle.eval(&g).unwrap());
            assert_eq!(v, oracle2.eval(&g).unwrap());
        }
    }

    #[test]
    fn hash_smooth_different_seeds_differ() {
        let spec = small_spec();
        let a = TabularOracle::hash_smooth(&spec, 1).unwrap();
        let b = TabularOracle::hash_smooth(&spec, 2).unwrap();
        let g = enumerate(&spec).unwrap().next().unwrap();
        assert_ne!(a.eval(&g).unwrap(), b.eval(&g).unwrap());
    }

    #[test]
    fn deceptive_center_scores_exactly_peak() {
        let spec = small_spec();
        let oracle = TabularOracle::deceptive(&spec, 7).unwrap();
        let global = oracle.global_basin_index().unwrap();
        let center = oracle.basins()[global].center.clone();
        assert_eq!(oracle.eval(&center).unwrap(), 0.95);
    }

    #[test]
    fn deceptive_far_point_is_negligible() {
        // Width 0.1 and distance 1.0 from both centers: the score is
        // below 1e-10 of the peak (Gaussian tail).
        let spec = CellSpec::new(1, 4, 2, vec![Op::Zero, Op::Identity, Op::Tanh], 1).unwrap();
        let cfg = OracleConfig {
            mode: OracleMode::Deceptive,
            seed: 3,
            local_width: 0.1,
            global_width: 0.1,
            ..OracleConfig::default()
        };
        let oracle = TabularOracle::from_config(&spec, &cfg).unwrap();
        // Construct a genotype whose every slot differs from both
        // centers (each slot has at least 3 candidate values).
        let c0 = &oracle.basins()[0].center;
        let c1 = &oracle.basins()[1].center;
        let edges: Vec<Edge> = spec
            .edge_slots()
            .zip(c0.edges().zip(c1.edges()))
            .map(|((_, node, _), ((_, _, _, e0), (_, _, _, e1)))| {
                for source in 0..spec.legal_sources(node) {
                    for op in 0..spec.num_ops() {
                        let e = Edge { source, op };
                        if e != e0 && e != e1 {
                            return e;
                        }
                    }
                }
                unreachable!("every slot has at least 3 values");
            })
            .collect();
        let far = genotype_from_flat(&spec, &edges);
        assert_eq!(arch::distance(&far, c0, &spec).unwrap(), 1.0);
        assert_eq!(arch::distance(&far, c1, &spec).unwrap(), 1.0);
        let v = oracle.eval(&far).unwrap();
        assert!(v < 1e-10 * 0.95, "score {v}");
    }

    #[test]
    fn deceptive_local_basin_dominates_mass() {
        let spec =
            CellSpec::new(1, 4, 1, vec![Op::Zero, Op::Identity, Op::Tanh, Op::Relu], 1).unwrap();
        let oracle = TabularOracle::deceptive(&spec, 5).unwrap();
        let global = oracle.global_basin_index().unwrap();
        let mut local_mass = 0usize;
        let mut global_mass = 0usize;
        for g in enumerate(&spec).unwrap() {
            if oracle.dominant_basin(&g).unwrap() == global {
                global_mass += 1;
            } else {
                local_mass += 1;
            }
        }
        assert!(global_mass > 0, "global basin attracts nothing");
        assert!(
            local_mass > 10 * global_mass,
            "local {local_mass} vs global {global_mass}"
        );
    }

    #[test]
    fn eval_rejects_mismatched_spec() {
        let spec = small_spec();
        let other = count_spec();
        let oracle = TabularOracle::hash_smooth(&spec, 1).unwrap();
        let g = enumerate(&other).unwrap().next().unwrap();
        assert!(matches!(oracle.eval(&g), Err(Error::SpecMismatch(_))));
    }
}
