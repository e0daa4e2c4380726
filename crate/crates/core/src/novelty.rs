//! Novelty archive and the architecture-sampling controller math.
//!
//! Novelty of an architecture is the mean distance to its k nearest
//! neighbors in a fixed-capacity archive of previously visited
//! architectures. Entries live in the continuous space; they are rounded
//! to genotypes before any distance is taken. The gradient of expected
//! novelty under Gaussian perturbation is estimated in evolution-strategies
//! style, and archive entries are updated by ascending that estimate,
//! optionally blended with a performance reward.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arch::{self, CellSpec, ContinuousArch, Genotype};
use crate::error::{Error, Result};

/// Fixed-capacity store of continuous architectures.
///
/// The archive grows by pushes until it reaches capacity and is updated
/// by in-place replacement afterwards. Rounded genotypes are cached per
/// entry so novelty queries do not re-round the whole archive.
#[derive(Debug, Clone)]
pub struct Archive {
    spec: CellSpec,
    capacity: usize,
    entries: Vec<ContinuousArch>,
    rounded: Vec<Genotype>,
}

impl Archive {
    pub fn new(spec: CellSpec, capacity: usize) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::InvalidConfig("archive capacity must be >= 1".into()));
        }
        Ok(Archive {
            spec,
            capacity,
            entries: Vec::new(),
            rounded: Vec::new(),
        })
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> &[ContinuousArch] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> Result<&ContinuousArch> {
        self.entries.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.entries.len(),
        })
    }

    /// The cached rounded genotype of entry `index`.
    pub fn rounded(&self, index: usize) -> Result<&Genotype> {
        self.rounded.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.rounded.len(),
        })
    }

    pub fn rounded_entries(&self) -> &[Genotype] {
        &self.rounded
    }

    /// Appends an entry. Errors once the archive is at capacity.
    pub fn push(&mut self, c: ContinuousArch) -> Result<()> {
        if self.is_full() {
            return Err(Error::ArchiveFull {
                capacity: self.capacity,
            });
        }
        let g = arch::round(&c, &self.spec)?;
        self.entries.push(c);
        self.rounded.push(g);
        Ok(())
    }

    /// Overwrites entry `index` in place.
    pub fn replace(&mut self, index: usize, c: ContinuousArch) -> Result<()> {
        if index >= self.entries.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.entries.len(),
            });
        }
        let g = arch::round(&c, &self.spec)?;
        self.entries[index] = c;
        self.rounded[index] = g;
        Ok(())
    }

    /// Uniformly samples an entry, returning it with its index.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<(usize, &ContinuousArch)> {
        if self.entries.is_empty() {
            return Err(Error::EmptyArchive);
        }
        let index = rng.gen_range(0..self.entries.len());
        Ok((index, &self.entries[index]))
    }

    /// Mean pairwise distance between rounded entries; 0 when fewer than
    /// two entries are stored.
    pub fn mean_pairwise_distance(&self) -> f64 {
        let n = self.rounded.len();
        if n < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                sum += arch::distance(&self.rounded[i], &self.rounded[j], &self.spec)
                    .expect("archive entries share one spec");
                pairs += 1;
            }
        }
        sum / pairs as f64
    }

    /// Writes the line-oriented snapshot: capacity, op names, spec
    /// dimensions, then one line per entry holding the rounded genotype
    /// and the raw continuous vector.
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "archive {} {}", self.capacity, self.entries.len())?;
        let ops: Vec<&str> = self.spec.ops().iter().map(|o| o.name()).collect();
        writeln!(w, "ops {}", ops.join(" "))?;
        writeln!(
            w,
            "cellspec {} {} {} {} {}",
            self.spec.num_input_nodes(),
            self.spec.num_op_nodes(),
            self.spec.inputs_per_node(),
            self.spec.num_ops(),
            self.spec.num_cell_types()
        )?;
        for (c, g) in self.entries.iter().zip(&self.rounded) {
            let genes: Vec<String> = g
                .edges()
                .map(|(_, _, _, e)| format!("{}:{}", e.source, e.op))
                .collect();
            let vals: Vec<String> = c.values().iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "g {} c {}", genes.join(" "), vals.join(" "))?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`Archive::write_snapshot`].
    pub fn read_snapshot<R: BufRead>(r: &mut R) -> Result<Archive> {
        let mut lines = Vec::new();
        for line in r.lines() {
            lines.push(line?);
        }
        let parse_err = |line: usize, msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };
        if lines.len() < 3 {
            return Err(parse_err(1, "snapshot needs at least 3 header lines"));
        }
        let head: Vec<&str> = lines[0].split_whitespace().collect();
        if head.len() != 3 || head[0] != "archive" {
            return Err(parse_err(1, "expected `archive <capacity> <len>`"));
        }
        let capacity: usize = head[1].parse().map_err(|_| parse_err(1, "bad capacity"))?;
        let len: usize = head[2].parse().map_err(|_| parse_err(1, "bad length"))?;

        let ops_line: Vec<&str> = lines[1].split_whitespace().collect();
        if ops_line.first() != Some(&"ops") {
            return Err(parse_err(2, "expected `ops <name>...`"));
        }
        let ops = ops_line[1..]
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| parse_err(2, &e.to_string()))?;

        let dims: Vec<&str> = lines[2].split_whitespace().collect();
        if dims.len() != 6 || dims[0] != "cellspec" {
            return Err(parse_err(3, "expected cellspec header"));
        }
        let nums: Vec<usize> = dims[1..]
            .iter()
            .map(|t| t.parse().map_err(|_| parse_err(3, "bad dimension")))
            .collect::<Result<_>>()?;
        let spec = CellSpec::new(nums[0], nums[1], nums[2], ops, nums[4])?;
        if nums[3] != spec.num_ops() {
            return Err(parse_err(3, "op count disagrees with ops line"));
        }

        let mut archive = Archive::new(spec, capacity)?;
        for (i, raw) in lines[3..].iter().enumerate() {
            let lineno = i + 4;
            if raw.trim().is_empty() {
                continue;
            }
            let c_pos = raw
                .find(" c ")
                .ok_or_else(|| parse_err(lineno, "missing continuous section"))?;
            let vals: Vec<f64> = raw[c_pos + 3..]
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(lineno, "bad float")))
                .collect::<Result<_>>()?;
            let c = ContinuousArch::new(vals, archive.spec())
                .map_err(|e| parse_err(lineno, &e.to_string()))?;
            archive.push(c)?;
        }
        if archive.len() != len {
            return Err(parse_err(
                lines.len(),
                &format!("expected {len} entries, got {}", archive.len()),
            ));
        }
        Ok(archive)
    }
}

/// Controller hyperparameters for novelty estimation and archive updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoveltyConfig {
    /// Neighbor count for the k-NN novelty mean.
    pub k: usize,
    /// Number of Gaussian perturbations per gradient estimate.
    pub n: usize,
    /// Perturbation scale.
    pub sigma: f64,
    /// Update step size.
    pub gamma: f64,
    /// Reward/novelty trade-off in `[0, 1]`; 1 is pure reward.
    pub w: f64,
}

impl Default for NoveltyConfig {
    fn default() -> Self {
        NoveltyConfig {
            k: 10,
            n: 10,
            sigma: 1.0,
            gamma: 0.1,
            w: 0.5,
        }
    }
}

impl NoveltyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("novelty k must be >= 1".into()));
        }
        if self.n < 1 {
            return Err(Error::InvalidConfig("novelty n must be >= 1".into()));
        }
        let sigma_ok = self.sigma.is_finite() && self.sigma > 0.0;
        if !sigma_ok {
            return Err(Error::InvalidConfig(
                "novelty sigma must be finite and > 0".into(),
            ));
        }
        let gamma_ok = self.gamma.is_finite() && self.gamma >= 0.0;
        if !gamma_ok {
            return Err(Error::InvalidConfig(
                "novelty gamma must be finite and >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::InvalidConfig("novelty w must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mean rounded distance from `c` to its `min(k, |archive|)` nearest
/// archive entries.
///
/// Both the query and every entry are compared through their rounded
/// genotypes; duplicate rounded entries contribute zero distances like
/// any other neighbor.
pub fn novelty(c: &ContinuousArch, archive: &Archive, k: usize) -> Result<f64> {
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    if k < 1 {
        return Err(Error::InvalidConfig("novelty k must be >= 1".into()));
    }
    let query = arch::round(c, archive.spec())?;
    let mut dists: Vec<f64> = archive
        .rounded_entries()
        .iter()
        .map(|g| arch::distance(&query, g, archive.spec()))
        .collect::<Result<_>>()?;
    dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let k_eff = k.min(dists.len());
    let sum: f64 = dists[..k_eff].iter().sum();
    Ok(sum / k_eff as f64)
}

fn standard_normal_vec<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Evolution-strategies estimate of the gradient of expected novelty at
/// `m` under Gaussian smoothing of scale `sigma`:
/// `(1 / (n * sigma)) * sum_i N(m + sigma * eps_i, A) * eps_i`.
///
/// The archive is read-only during the estimate. Draws `cfg.n`
/// perturbation vectors from `rng`, each one `2E` standard normals in
/// component order.
pub fn novelty_gradient<R: Rng>(
    m: &ContinuousArch,
    archive: &Archive,
    cfg: &NoveltyConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    let dim = m.len();
    let mut grad = vec![0.0; dim];
    for _ in 0..cfg.n {
        let eps = standard_normal_vec(dim, rng);
        let perturbed: Vec<f64> = m
            .values()
            .iter()
            .zip(&eps)
            .map(|(v, e)| v + cfg.sigma * e)
            .collect();
        let perturbed = ContinuousArch::new(perturbed, archive.spec())?;
        let n_val = novelty(&perturbed, archive, cfg.k)?;
        for (g, e) in grad.iter_mut().zip(&eps) {
            *g += n_val * e;
        }
    }
    let scale = 1.0 / (cfg.n as f64 * cfg.sigma);
    for g in grad.iter_mut() {
        *g *= scale;
    }
    Ok(grad)
}

fn step(
    base: &ContinuousArch,
    grad: &[f64],
    gamma: f64,
    spec: &CellSpec,
) -> Result<ContinuousArch> {
    let values: Vec<f64> = base
        .values()
        .iter()
        .zip(grad)
        .map(|(v, g)| v + gamma * g)
        .collect();
    let updated = ContinuousArch::new(values, spec)?;
    updated.validate_finite()?;
    Ok(updated)
}

/// Pure-novelty update of archive entry `m_index`:
/// `alpha' = alpha_m + gamma * grad_novelty(alpha_m)`.
///
/// Returns the updated vector without touching the archive; replacement
/// is the caller's step.
pub fn update_novelty<R: Rng>(
    m_index: usize,
    archive: &Archive,
    cfg: &NoveltyConfig,
    rng: &mut R,
) -> Result<ContinuousArch> {
    let base = archive.entry(m_index)?.clone();
    let grad = novelty_gradient(&base, archive, cfg, rng)?;
    step(&base, &grad, cfg.gamma, archive.spec())
}

/// Novelty-plus-reward update of archive entry `m_index`:
/// `alpha' = alpha_m + gamma * (1/(n*sigma)) * sum_i
///   [w * ACC(round(alpha_m + sigma*eps_i)) + (1-w) * N(alpha_m + sigma*eps_i, A)] * eps_i`.
///
/// The same perturbations serve both terms. The evaluator maps a rounded
/// genotype to an accuracy in `[0, 1]`; its failure aborts the update.
pub fn update_combined<R, F>(
    m_index: usize,
    archive: &Archive,
    cfg: &NoveltyConfig,
    evaluator: &mut F,
    rng: &mut R,
) -> Result<ContinuousArch>
where
    R: Rng,
    F: FnMut(&Genotype) -> Result<f64>,
{
    cfg.validate()?;
    let base = archive.entry(m_index)?.clone();
    let dim = base.len();
    let mut grad = vec![0.0; dim];
    for _ in 0..cfg.n {
        let eps = standard_normal_vec(dim, rng);
        let perturbed: Vec<f64> = base
            .values()
            .iter()
            .zip(&eps)
            .map(|(v, e)| v + cfg.sigma * e)
            .collect();
        let perturbed = ContinuousArch::new(perturbed, archive.spec())?;
        let n_val = novelty(&perturbed, archive, cfg.k)?;
        let g_rounded = arch::round(&perturbed, archive.spec())?;
        let acc = evaluator(&g_rounded)?;
        let coeff = cfg.w * acc + (1.0 - cfg.w) * n_val;
        for (g, e) in grad.iter_mut().zip(&eps) {
            *g += coeff * e;
        }
    }
    let scale = 1.0 / (cfg.n as f64 * cfg.sigma);
    for g in grad.iter_mut() {
        *g *= scale;
    }
    step(&base, &grad, cfg.gamma, archive.spec())
}
