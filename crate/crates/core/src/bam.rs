//! Bidirectional associative memory.
//!
//! Each task owns one matrix `W` (`m × n`) built by summing outer products
//! `y xᵀ` of bipolar pattern pairs. Retrieval alternates `y = sgn(W x)` and
//! `x = sgn(Wᵀ y)` with `sgn(v) = +1` for `v > 0` and `-1` otherwise, which
//! never increases the energy `E = -yᵀ W x`. Class labels are stored as
//! bipolar one-hot vectors (`+1` at the class, `-1` elsewhere).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::lif::SpikeTrain;
use crate::tensor::{Real, Tensor};

/// Vector with every entry in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BipolarPattern(Vec<i8>);

impl BipolarPattern {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(i) = values.iter().position(|&v| v != 1 && v != -1) {
            return Err(Error::Data(format!(
                "bipolar pattern entry {i} is {}, expected ±1",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    /// `+1` at `class`, `-1` elsewhere.
    pub fn one_hot(class: usize, m: usize) -> Result<Self> {
        if class >= m {
            return Err(Error::Usage(format!(
                "class {class} out of range for {m} classes"
            )));
        }
        Ok(Self(
            (0..m).map(|i| if i == class { 1 } else { -1 }).collect(),
        ))
    }

    /// Sign threshold with `sgn(0) = -1`.
    pub fn from_signs(values: impl IntoIterator<Item = f64>) -> Self {
        Self(values.into_iter().map(sgn).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn dot(&self, other: &Self) -> i64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a as i64) * (b as i64))
            .sum()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|&v| -v).collect())
    }

    /// Inverse of [`bipolarize_spikes`]: `-1 → 0`, `+1 → 1`, read
    /// neuron-major.
    pub fn to_spikes(&self, neurons: usize, steps: usize) -> Result<SpikeTrain> {
        SpikeTrain::new(neurons, steps, self.0.iter().map(|&v| v > 0).collect())
    }
}

#[inline]
fn sgn(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else {
        -1
    }
}

/// Flattens neuron-major and maps `0 → -1`, `1 → +1`.
pub fn bipolarize_spikes(spikes: &SpikeTrain) -> BipolarPattern {
    BipolarPattern(
        spikes
            .as_slice()
            .iter()
            .map(|&s| if s { 1 } else { -1 })
            .collect(),
    )
}

/// Bipolarises a real-valued population code by sign: entries above
/// `midpoint` become `+1`.
pub fn bipolarize_code<T: Real>(code: &Tensor<T>, midpoint: T) -> BipolarPattern {
    BipolarPattern(
        code.data()
            .iter()
            .map(|&v| if v > midpoint { 1 } else { -1 })
            .collect(),
    )
}

/// Which extremum of the score vector picks the class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecisionRule {
    #[default]
    ArgMax,
    /// The printed form of the decision rule; kept for debugging only, it
    /// selects the least similar class.
    ArgMin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub class: usize,
    /// Pre-sign scores `W x`.
    pub scores: Vec<f64>,
    /// More than one class reached the winning score; the lowest index won.
    pub tie: bool,
}

/// Outcome of alternating retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixpoint {
    pub x: BipolarPattern,
    pub y: BipolarPattern,
    /// Energy after every half-step, starting with `E(x0, sgn(W x0))`.
    pub energy_trace: Vec<f64>,
    /// Forward/backward passes before the state stopped changing.
    pub iterations: usize,
    pub converged: bool,
}

/// Hetero-associative memory matrix of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct AmMatrix {
    task_id: String,
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    stored: usize,
}

impl AmMatrix {
    pub fn zeros(task_id: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            task_id: task_id.into(),
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            stored: 0,
        }
    }

    /// Builds a matrix from row-major weights.
    pub fn from_weights(
        task_id: impl Into<String>,
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        stored: usize,
    ) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}×{cols} matrix needs {} weights, got {}",
                rows * cols,
                weights.len()
            )));
        }
        Ok(Self {
            task_id: task_id.into(),
            rows,
            cols,
            weights,
            stored,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    /// Number of output (class) units `m`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Length of the input pattern `n`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn stored_pairs(&self) -> usize {
        self.stored
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols + col]
    }

    /// Hebbian update `W += y xᵀ`.
    pub fn store(&mut self, x: &BipolarPattern, y: &BipolarPattern) -> Result<()> {
        if x.len() != self.cols || y.len() != self.rows {
            return Err(Error::Shape(format!(
                "pair ({}, {}) does not fit a {}×{} memory",
                x.len(),
                y.len(),
                self.rows,
                self.cols
            )));
        }
        for (r, &yv) in y.values().iter().enumerate() {
            let row = &mut self.weights[r * self.cols..(r + 1) * self.cols];
            for (w, &xv) in row.iter_mut().zip(x.values()) {
                *w += (yv * xv) as f64;
            }
        }
        self.stored += 1;
        Ok(())
    }

    fn check_x(&self, x: &BipolarPattern) -> Result<()> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "input pattern has {} entries, memory expects {}",
                x.len(),
                self.cols
            )));
        }
        Ok(())
    }

    fn check_y(&self, y: &BipolarPattern) -> Result<()> {
        if y.len() != self.rows {
            return Err(Error::Shape(format!(
                "output pattern has {} entries, memory expects {}",
                y.len(),
                self.rows
            )));
        }
        Ok(())
    }

    /// Pre-sign scores `W x`.
    pub fn scores(&self, x: &BipolarPattern) -> Result<Vec<f64>> {
        self.check_x(x)?;
        Ok(self
            .weights
            .chunks(self.cols)
            .map(|row| {
                row.iter()
                    .zip(x.values())
                    .map(|(&w, &v)| if v > 0 { w } else { -w })
                    .sum()
            })
            .collect())
    }

    /// `Wᵀ y`.
    pub fn back_scores(&self, y: &BipolarPattern) -> Result<Vec<f64>> {
        self.check_y(y)?;
        let mut out = vec![0.0; self.cols];
        for (row, &yv) in self.weights.chunks(self.cols).zip(y.values()) {
            let s = yv as f64;
            for (o, &w) in out.iter_mut().zip(row) {
                *o += s * w;
            }
        }
        Ok(out)
    }

    /// `sgn(W x)`.
    pub fn retrieve_forward(&self, x: &BipolarPattern) -> Result<BipolarPattern> {
        Ok(BipolarPattern::from_signs(self.scores(x)?))
    }

    /// `sgn(Wᵀ y)`.
    pub fn retrieve_backward(&self, y: &BipolarPattern) -> Result<BipolarPattern> {
        Ok(BipolarPattern::from_signs(self.back_scores(y)?))
    }

    /// `E = -yᵀ W x`.
    pub fn energy(&self, x: &BipolarPattern, y: &BipolarPattern) -> Result<f64> {
        self.check_y(y)?;
        let s = self.scores(x)?;
        Ok(-s
            .iter()
            .zip(y.values())
            .map(|(&v, &yv)| v * yv as f64)
            .sum::<f64>())
    }

    /// Alternates forward and backward retrieval from `x0` until a full
    /// pass leaves `(x, y)` unchanged, or `max_iterations` passes elapse.
    /// Revisiting an earlier, non-adjacent state is reported as an error.
    pub fn iterate_to_fixpoint(
        &self,
        x0: &BipolarPattern,
        max_iterations: usize,
    ) -> Result<Fixpoint> {
        let mut y = self.retrieve_forward(x0)?;
        let mut trace = vec![self.energy(x0, &y)?];
        let mut x = self.retrieve_backward(&y)?;
        trace.push(self.energy(&x, &y)?);
        let mut history = vec![(x.clone(), y.clone())];
        for iteration in 1..=max_iterations {
            let y_next = self.retrieve_forward(&x)?;
            trace.push(self.energy(&x, &y_next)?);
            let x_next = self.retrieve_backward(&y_next)?;
            trace.push(self.energy(&x_next, &y_next)?);
            if x_next == x && y_next == y {
                return Ok(Fixpoint {
                    x,
                    y,
                    energy_trace: trace,
                    iterations: iteration,
                    converged: true,
                });
            }
            if let Some(pos) = history
                .iter()
                .position(|(hx, hy)| *hx == x_next && *hy == y_next)
            {
                return Err(Error::Numeric(format!(
                    "retrieval entered a cycle of length {}",
                    history.len() - pos
                )));
            }
            history.push((x_next.clone(), y_next.clone()));
            x = x_next;
            y = y_next;
        }
        Ok(Fixpoint {
            x,
            y,
            energy_trace: trace,
            iterations: max_iterations,
            converged: false,
        })
    }

    pub fn classify(&self, x: &BipolarPattern) -> Result<Classification> {
        self.classify_with(x, DecisionRule::ArgMax)
    }

    pub fn classify_with(&self, x: &BipolarPattern, rule: DecisionRule) -> Result<Classification> {
        let scores = self.scores(x)?;
        let better = |a: f64, b: f64| match rule {
            DecisionRule::ArgMax => a > b,
            DecisionRule::ArgMin => a < b,
        };
        let mut class = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if better(s, scores[class]) {
                class = i;
            }
        }
        let tie = scores.iter().filter(|&&s| s == scores[class]).count() > 1;
        Ok(Classification { class, scores, tie })
    }

    /// Characteristic input pattern of a class: `sgn(Wᵀ y_class)`.
    pub fn invert_label(&self, class: usize) -> Result<BipolarPattern> {
        let y = BipolarPattern::one_hot(class, self.rows)?;
        self.retrieve_backward(&y)
    }
}

/// Hebbian storage of `(x, y)` pairs into a fresh matrix.
pub fn store_pairs(
    task_id: impl Into<String>,
    pairs: &[(BipolarPattern, BipolarPattern)],
) -> Result<AmMatrix> {
    let (x0, y0) = pairs
        .first()
        .ok_or_else(|| Error::Data("cannot build a memory from zero pairs".into()))?;
    let mut w = AmMatrix::zeros(task_id, y0.len(), x0.len());
    for (i, (x, y)) in pairs.iter().enumerate() {
        w.store(x, y)
            .map_err(|e| Error::Data(format!("pair {i}: {e}")))?;
    }
    Ok(w)
}

/// One memory matrix per task.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskRegistry {
    memories: BTreeMap<String, AmMatrix>,
}

const REGISTRY_MAGIC: &[u8; 8] = b"SPKMAMMX";
pub const REGISTRY_VERSION: u32 = 1;

impl TaskRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, memory: AmMatrix) -> Option<AmMatrix> {
        self.memories.insert(memory.task_id.clone(), memory)
    }

    pub fn get(&self, task_id: &str) -> Result<&AmMatrix> {
        self.memories
            .get(task_id)
            .ok_or_else(|| Error::Usage(format!("no memory trained for task {task_id:?}")))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &str> {
        self.memories.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.memories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memories.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AmMatrix> {
        self.memories.values()
    }

    /// Little-endian: magic, version, count, then per matrix the task id
    /// (u32 length + UTF-8), stored-pair count (u64), `m` and `n` (u64) and
    /// `m·n` row-major f64 weights.
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        use crate::tensor::checkpoint::{write_u32, write_u64};
        let io = |e| Error::io("<registry stream>", e);
        w.write_all(REGISTRY_MAGIC).map_err(io)?;
        write_u32(w, REGISTRY_VERSION)?;
        write_u32(w, self.memories.len() as u32)?;
        for m in self.memories.values() {
            write_u32(w, m.task_id.len() as u32)?;
            w.write_all(m.task_id.as_bytes()).map_err(io)?;
            write_u64(w, m.stored as u64)?;
            write_u64(w, m.rows as u64)?;
            write_u64(w, m.cols as u64)?;
            let mut buf = Vec::with_capacity(m.weights.len() * 8);
            for v in &m.weights {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).map_err(io)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        use crate::tensor::checkpoint::{read_f64s, read_u32, read_u64};
        let io = |e| Error::io("<registry stream>", e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != REGISTRY_MAGIC {
            return Err(Error::Data("not a memory registry (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != REGISTRY_VERSION {
            return Err(Error::Version {
                what: "memory registry",
                found: version,
                expected: REGISTRY_VERSION,
            });
        }
        let count = read_u32(r)?;
        let mut reg = Self::new();
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            if len > 1 << 16 {
                return Err(Error::Data(format!("implausible task id length {len}")));
            }
            let mut id = vec![0u8; len];
            r.read_exact(&mut id).map_err(io)?;
            let id = String::from_utf8(id)
                .map_err(|_| Error::Data("task id is not valid UTF-8".into()))?;
            let stored = read_u64(r)? as usize;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n <= 1 << 32)
                .ok_or_else(|| Error::Data(format!("implausible memory size {rows}×{cols}")))?;
            let weights = read_f64s(r, n)?;
            reg.insert(AmMatrix::from_weights(id, rows, cols, weights, stored)?);
        }
        Ok(reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[i8]) -> BipolarPattern {
        BipolarPattern::new(v.to_vec()).unwrap()
    }

    fn single() -> AmMatrix {
        store_pairs("t", &[(p(&[1, -1, 1]), p(&[1, -1]))]).unwrap()
    }

    #[test]
    fn bipolarize_flattens_neuron_major() {
        let s = SpikeTrain::new(2, 2, vec![true, false, false, true]).unwrap();
        let b = bipolarize_spikes(&s);
        assert_eq!(b.values(), &[1, -1, -1, 1]);
        assert_eq!(b.to_spikes(2, 2).unwrap(), s);
        let silent = bipolarize_spikes(&SpikeTrain::silent(3, 2));
        assert!(silent.values().iter().all(|&v| v == -1));
    }

    #[test]
    fn rejects_non_bipolar_values() {
        assert!(BipolarPattern::new(vec![1, 0, -1]).is_err());
    }

    #[test]
    fn single_pair_outer_product() {
        let w = single();
        assert_eq!(w.weights(), &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        assert_eq!(w.stored_pairs(), 1);
    }

    #[test]
    fn storing_twice_doubles() {
        let pair = (p(&[1, -1, 1]), p(&[1, -1]));
        let w2 = store_pairs("t", &[pair.clone(), pair]).unwrap();
        let w1 = single();
        for (a, b) in w2.weights().iter().zip(w1.weights()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn empty_or_ragged_pairs_are_errors() {
        assert!(store_pairs("t", &[]).is_err());
        let r = store_pairs("t", &[(p(&[1, 1]), p(&[1])), (p(&[1, 1, 1]), p(&[1]))]);
        assert!(r.is_err());
    }

    #[test]
    fn single_pair_retrieval_both_ways() {
        let w = single();
        assert_eq!(w.scores(&p(&[1, -1, 1])).unwrap(), vec![3.0, -3.0]);
        assert_eq!(w.retrieve_forward(&p(&[1, -1, 1])).unwrap(), p(&[1, -1]));
        assert_eq!(w.back_scores(&p(&[1, -1])).unwrap(), vec![2.0, -2.0, 2.0]);
        assert_eq!(w.retrieve_backward(&p(&[1, -1])).unwrap(), p(&[1, -1, 1]));
    }

    #[test]
    fn zero_matrix_maps_to_all_minus_one() {
        let w = AmMatrix::zeros("z", 2, 3);
        assert_eq!(w.retrieve_forward(&p(&[1, 1, -1])).unwrap(), p(&[-1, -1]));
        assert_eq!(w.invert_label(1).unwrap(), p(&[-1, -1, -1]));
        assert_eq!(w.energy(&p(&[1, 1, -1]), &p(&[1, -1])).unwrap(), 0.0);
        let c = w.classify(&p(&[1, 1, 1])).unwrap();
        assert_eq!(c.class, 0);
        assert!(c.tie);
    }

    #[test]
    fn energy_of_stored_pair_and_sign_flip() {
        let w = single();
        let (x, y) = (p(&[1, -1, 1]), p(&[1, -1]));
        assert_eq!(w.energy(&x, &y).unwrap(), -6.0);
        assert_eq!(w.energy(&x, &y.negated()).unwrap(), 6.0);
    }

    #[test]
    fn stored_pair_is_an_immediate_fixpoint() {
        let w = single();
        let f = w.iterate_to_fixpoint(&p(&[1, -1, 1]), 10).unwrap();
        assert!(f.converged);
        assert_eq!(f.iterations, 1);
        assert_eq!(f.y, p(&[1, -1]));
        assert_eq!(f.energy_trace[0], -6.0);
        assert!(f.energy_trace.iter().all(|&e| e == -6.0));
    }

    #[test]
    fn classify_and_invert_single_pair() {
        let w = single();
        let c = w.classify(&p(&[1, -1, 1])).unwrap();
        assert_eq!(c.class, 0);
        assert!(!c.tie);
        assert_eq!(w.invert_label(0).unwrap(), p(&[1, -1, 1]));
        assert!(w.invert_label(2).is_err());
    }

    #[test]
    fn argmin_rule_picks_the_other_class() {
        let w = single();
        let c = w
            .classify_with(&p(&[1, -1, 1]), DecisionRule::ArgMin)
            .unwrap();
        assert_eq!(c.class, 1);
    }

    #[test]
    fn two_orthogonal_pairs_in_four_classes() {
        // With four classes, distinct bipolar one-hot labels are orthogonal,
        // so inversion returns exactly the stored pattern.
        let x0 = p(&[1, 1, -1, -1]);
        let x1 = p(&[1, -1, 1, -1]);
        assert_eq!(x0.dot(&x1), 0);
        let y0 = BipolarPattern::one_hot(0, 4).unwrap();
        let y1 = BipolarPattern::one_hot(1, 4).unwrap();
        let w = store_pairs("t", &[(x0.clone(), y0.clone()), (x1.clone(), y1.clone())]).unwrap();
        assert_eq!(w.retrieve_forward(&x0).unwrap(), y0);
        assert_eq!(w.retrieve_forward(&x1).unwrap(), y1);
        assert_eq!(w.invert_label(1).unwrap(), x1);
        assert_ne!(w.invert_label(1).unwrap(), x0);
        let f = w.iterate_to_fixpoint(&x1, 10).unwrap();
        assert_eq!((f.iterations, f.y), (1, y1));
    }

    #[test]
    fn registry_roundtrip() {
        let mut reg = TaskRegistry::new();
        reg.insert(single());
        reg.insert(AmMatrix::zeros("b", 4, 5));
        let mut buf = Vec::new();
        reg.write(&mut buf).unwrap();
        assert_eq!(TaskRegistry::read(&mut buf.as_slice()).unwrap(), reg);
        assert!(reg.get("missing").is_err());
    }
}
