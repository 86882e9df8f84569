//! Coalescent point process samples and their carrier structure.
//!
//! A sample of `n` individuals is described by the branch lengths
//! `H_1 .. H_{n-1}` (`H_0` is infinite by convention). The coalescence time
//! between individuals `i < j` is `max{H_{i+1}, .., H_j}`. A mutation at
//! height `x` on branch `i` is carried by the block of individuals
//! `i .. j-1` where `j` is the least index `> i` with `H_j >= x`.
//!
//! Carrier queries run along the increasing-record chain encoded by the
//! `next_taller` array, built by one monotonic-stack pass.

use crate::scale::{BranchLength, ScaleModel};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenealogyError {
    #[error("defective branch law: apply horizon or condition_finite")]
    DefectiveBranchLaw,
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("mutation above branch: height {height} >= branch length {length}")]
    MutationAboveBranch { height: f64, length: f64 },
    #[error("branch lengths must be finite and positive")]
    InvalidLength,
}

/// Sparse table for range-maximum queries over the branch lengths.
#[derive(Debug)]
struct SparseTable {
    rows: Vec<Vec<f64>>,
}

impl SparseTable {
    fn new(values: &[f64]) -> Self {
        let n = values.len();
        let levels = if n <= 1 { 1 } else { n.ilog2() as usize + 1 };
        let mut rows = Vec::with_capacity(levels);
        rows.push(values.to_vec());
        for level in 1..levels {
            let half = 1usize << (level - 1);
            let prev = &rows[level - 1];
            let len = n + 1 - (1 << level);
            let mut row = Vec::with_capacity(len);
            for j in 0..len {
                row.push(prev[j].max(prev[j + half]));
            }
            rows.push(row);
        }
        SparseTable { rows }
    }

    /// Max over the inclusive index range `[lo, hi]`.
    fn max(&self, lo: usize, hi: usize) -> f64 {
        debug_assert!(lo <= hi);
        let k = (hi - lo + 1).ilog2() as usize;
        self.rows[k][lo].max(self.rows[k][hi + 1 - (1 << k)])
    }
}

/// A simulated (or fixture) coalescent point process sample.
#[derive(Debug)]
pub struct CoalescentSample {
    n: usize,
    /// `lengths[i - 1] = H_i` for branches `1 .. n-1`.
    lengths: Vec<f64>,
    /// `next_taller[i - 1]` = least `j > i` with `H_j >= H_i`, else `n`.
    next_taller: Vec<usize>,
    /// `prev_taller[i - 1]` = greatest `j < i` with `H_j > H_i`, else `0`.
    prev_taller: Vec<usize>,
    /// Branch index of the first maximum (`Y_n = H[y_index]`); 0 when n = 1.
    y_index: usize,
    seed: Option<u64>,
    rmq: OnceLock<SparseTable>,
}

impl CoalescentSample {
    /// Build a sample from given branch lengths `H_1 .. H_{n-1}`.
    pub fn from_lengths(lengths: Vec<f64>) -> Result<Self, GenealogyError> {
        if lengths.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(GenealogyError::InvalidLength);
        }
        let n = lengths.len() + 1;
        let m = lengths.len();

        let mut next_taller = vec![n; m];
        let mut stack: Vec<usize> = Vec::new(); // 0-based indices into lengths
        for i in (0..m).rev() {
            while let Some(&top) = stack.last() {
                if lengths[top] < lengths[i] {
                    stack.pop();
                } else {
                    break;
                }
            }
            next_taller[i] = stack.last().map_or(n, |&top| top + 1);
            stack.push(i);
        }

        let mut prev_taller = vec![0; m];
        stack.clear();
        for i in 0..m {
            while let Some(&top) = stack.last() {
                if lengths[top] <= lengths[i] {
                    stack.pop();
                } else {
                    break;
                }
            }
            prev_taller[i] = stack.last().map_or(0, |&top| top + 1);
            stack.push(i);
        }

        let y_index = lengths
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i + 1);

        Ok(Self {
            n,
            lengths,
            next_taller,
            prev_taller,
            y_index,
            seed: None,
            rmq: OnceLock::new(),
        })
    }

    /// Draw `n - 1` i.i.d. branch lengths from the model.
    pub fn simulate<R: Rng>(
        model: &ScaleModel,
        n: usize,
        rng: &mut R,
    ) -> Result<Self, GenealogyError> {
        if model.defect_mass() > 0.0 {
            return Err(GenealogyError::DefectiveBranchLaw);
        }
        assert!(n >= 1, "sample size must be at least 1");
        let mut lengths = Vec::with_capacity(n - 1);
        for _ in 1..n {
            let mut u: f64 = rng.gen();
            while u <= 0.0 {
                u = rng.gen();
            }
            match model.sample_branch_length(u) {
                BranchLength::Finite(x) => lengths.push(x),
                BranchLength::Infinite => return Err(GenealogyError::DefectiveBranchLaw),
            }
        }
        Self::from_lengths(lengths)
    }

    /// Like [`simulate`](Self::simulate) but records the seed used.
    pub fn simulate_seeded(
        model: &ScaleModel,
        n: usize,
        seed: u64,
    ) -> Result<Self, GenealogyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = Self::simulate(model, n, &mut rng)?;
        sample.seed = Some(seed);
        Ok(sample)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Branch lengths `H_1 .. H_{n-1}`.
    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// `H_i` for `1 <= i <= n-1`.
    pub fn length(&self, i: usize) -> f64 {
        self.lengths[i - 1]
    }

    /// Least `j > i` with `H_j >= H_i`, or `n`.
    pub fn next_taller(&self, i: usize) -> usize {
        self.next_taller[i - 1]
    }

    /// Greatest `j < i` with `H_j > H_i`, or `0`.
    pub fn prev_taller(&self, i: usize) -> usize {
        self.prev_taller[i - 1]
    }

    /// `Y_n = max{H_1, .., H_{n-1}}`.
    pub fn y_max(&self) -> f64 {
        assert!(self.n >= 2, "Y_n needs at least two individuals");
        self.lengths[self.y_index - 1]
    }

    /// Branch index carrying the first maximum.
    pub fn y_index(&self) -> usize {
        assert!(self.n >= 2);
        self.y_index
    }

    /// Coalescence time between individuals `i < j`: `max{H_{i+1}, .., H_j}`.
    ///
    /// O(log n) to build the sparse table once, O(1) per query afterwards.
    pub fn coalescence_time(&self, i: usize, j: usize) -> Result<f64, GenealogyError> {
        if i >= j || j > self.n - 1 {
            return Err(GenealogyError::IndexOutOfRange(format!(
                "coalescence_time({i}, {j}) with n = {}",
                self.n
            )));
        }
        let table = self.rmq.get_or_init(|| SparseTable::new(&self.lengths));
        Ok(table.max(i, j - 1))
    }

    /// Least branch index `j >= start` with `H_j >= x`, walking the record
    /// chain; `n` if every later branch is shorter.
    fn first_taller_from(&self, start: usize, x: f64) -> usize {
        let mut cur = start;
        while cur < self.n {
            if self.lengths[cur - 1] >= x {
                return cur;
            }
            cur = self.next_taller[cur - 1];
        }
        self.n
    }

    /// Number of individuals carrying a mutation at height `x` on branch `i`.
    ///
    /// For `i >= 1` requires `0 < x < H_i`. For branch 0 a height at or above
    /// `Y_n` is carried by the whole sample and `n` is returned.
    pub fn carrier_count(&self, i: usize, x: f64) -> Result<usize, GenealogyError> {
        if i > self.n - 1 {
            return Err(GenealogyError::IndexOutOfRange(format!(
                "branch {i} with n = {}",
                self.n
            )));
        }
        if !(x > 0.0) {
            return Err(GenealogyError::IndexOutOfRange(format!("height {x} <= 0")));
        }
        if i >= 1 && x >= self.lengths[i - 1] {
            return Err(GenealogyError::MutationAboveBranch {
                height: x,
                length: self.lengths[i - 1],
            });
        }
        Ok(self.first_taller_from(i + 1, x) - i)
    }

    /// Partition of branch `i` — `(0, H_i)`, or `(0, Y_n)` for branch 0 —
    /// into maximal height intervals of constant carrier count.
    pub fn carrier_intervals(&self, i: usize) -> Result<Vec<CarrierInterval>, GenealogyError> {
        if i > self.n - 1 {
            return Err(GenealogyError::IndexOutOfRange(format!(
                "branch {i} with n = {}",
                self.n
            )));
        }
        let cap = if i == 0 {
            self.y_max()
        } else {
            self.lengths[i - 1]
        };
        let mut out = Vec::new();
        let mut lo = 0.0;
        let mut cur = i + 1;
        while cur < self.n && self.lengths[cur - 1] < cap {
            out.push(CarrierInterval {
                lo,
                hi: self.lengths[cur - 1],
                count: cur - i,
            });
            lo = self.lengths[cur - 1];
            cur = self.next_taller[cur - 1];
        }
        out.push(CarrierInterval {
            lo,
            hi: cap,
            count: cur - i,
        });
        Ok(out)
    }

    /// Subtending measures `L_1 .. L_{n-1}`: `L_k` is the total tree length
    /// carrying exactly `k` tips (branch 0 capped at `Y_n`). Returned vector
    /// is indexed by `k - 1`.
    pub fn subtending_measures(&self) -> Vec<f64> {
        assert!(self.n >= 2, "subtending measures need n >= 2");
        let mut measures = vec![0.0; self.n - 1];
        for i in 0..self.n {
            for iv in self.carrier_intervals(i).expect("branch index in range") {
                measures[iv.count - 1] += iv.hi - iv.lo;
            }
        }
        measures
    }

    /// Dump branches as CSV with header `index,length`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,length")?;
        for (i, h) in self.lengths.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, h)?;
        }
        Ok(())
    }
}

/// One constant-count height interval on a branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarrierInterval {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn fig2() -> CoalescentSample {
        CoalescentSample::from_lengths(vec![6.0, 12.0, 6.5, 3.5, 7.5, 16.5, 6.0, 3.0]).unwrap()
    }

    #[test]
    fn lone_individual() {
        let m = ScaleModel::critical(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = CoalescentSample::simulate(&m, 1, &mut rng).unwrap();
        assert_eq!(s.n(), 1);
        assert!(s.lengths().is_empty());
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = ScaleModel::critical(1.0).unwrap();
        let a = CoalescentSample::simulate_seeded(&m, 5, 42).unwrap();
        let b = CoalescentSample::simulate_seeded(&m, 5, 42).unwrap();
        assert_eq!(a.lengths(), b.lengths());
        assert_eq!(a.seed(), Some(42));
    }

    #[test]
    fn defective_law_rejected() {
        let m = ScaleModel::birth_death(1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            CoalescentSample::simulate(&m, 10, &mut rng),
            Err(GenealogyError::DefectiveBranchLaw)
        ));
    }

    #[test]
    fn fig2_coalescence_times() {
        let s = fig2();
        assert_eq!(s.coalescence_time(0, 2).unwrap(), 12.0);
        assert_eq!(s.coalescence_time(0, 8).unwrap(), 16.5);
        assert_eq!(s.y_max(), 16.5);
        for i in 0..8 {
            assert_eq!(s.coalescence_time(i, i + 1).unwrap(), s.length(i + 1));
        }
        assert!(s.coalescence_time(3, 3).is_err());
        assert!(s.coalescence_time(0, 9).is_err());
    }

    #[test]
    fn fig2_carrier_counts() {
        let s = fig2();
        assert_eq!(s.carrier_count(2, 10.5).unwrap(), 4);
        assert_eq!(s.carrier_count(7, 5.0).unwrap(), 2);
        assert_eq!(s.carrier_count(0, 14.5).unwrap(), 6);
        assert_eq!(s.carrier_count(6, 13.0).unwrap(), 3);
        assert_eq!(s.carrier_count(3, 2.0).unwrap(), 1);
        assert!(matches!(
            s.carrier_count(3, 6.5),
            Err(GenealogyError::MutationAboveBranch { .. })
        ));
    }

    #[test]
    fn carrier_intervals_small() {
        let s = CoalescentSample::from_lengths(vec![1.0, 3.0]).unwrap();
        assert_eq!(
            s.carrier_intervals(0).unwrap(),
            vec![
                CarrierInterval { lo: 0.0, hi: 1.0, count: 1 },
                CarrierInterval { lo: 1.0, hi: 3.0, count: 2 },
            ]
        );
        assert_eq!(
            s.carrier_intervals(2).unwrap(),
            vec![CarrierInterval { lo: 0.0, hi: 3.0, count: 1 }]
        );
        assert_eq!(
            s.carrier_intervals(1).unwrap(),
            vec![CarrierInterval { lo: 0.0, hi: 1.0, count: 1 }]
        );
    }

    #[test]
    fn subtending_measures_small() {
        let s = CoalescentSample::from_lengths(vec![1.0, 3.0]).unwrap();
        let l = s.subtending_measures();
        assert_abs_diff_eq!(l[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[1], 2.0, epsilon = 1e-12);

        // n = 2: L_1 = 2h.
        let s = CoalescentSample::from_lengths(vec![4.25]).unwrap();
        assert_abs_diff_eq!(s.subtending_measures()[0], 8.5, epsilon = 1e-12);
    }

    #[test]
    fn measures_conserve_tree_length() {
        let m = ScaleModel::yule(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let s = CoalescentSample::simulate(&m, 40, &mut rng).unwrap();
            let total: f64 = s.subtending_measures().iter().sum();
            let expected = s.y_max() + s.lengths().iter().sum::<f64>();
            assert_abs_diff_eq!(total, expected, epsilon = 1e-9 * expected);
        }
    }

    #[test]
    fn pointer_jumping_matches_scan() {
        let m = ScaleModel::critical(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = CoalescentSample::simulate(&m, 60, &mut rng).unwrap();
            for i in 0..s.n() - 1 {
                // Probe at every breakpoint height just below a later branch.
                for j in i + 1..s.n() {
                    let x = s.length(j) * (1.0 - 1e-12);
                    if i >= 1 && x >= s.length(i) {
                        continue;
                    }
                    let fast = s.carrier_count(i, x).unwrap();
                    let mut scan = i + 1;
                    while scan < s.n() && s.length(scan) < x {
                        scan += 1;
                    }
                    assert_eq!(fast, scan - i);
                }
            }
        }
    }

    #[test]
    fn rmq_matches_direct_max() {
        let m = ScaleModel::yule(2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = CoalescentSample::simulate(&m, 200, &mut rng).unwrap();
        for _ in 0..10_000 {
            let i = rng.gen_range(0..s.n() - 1);
            let j = rng.gen_range(i + 1..s.n());
            let direct = (i + 1..=j).map(|k| s.length(k)).fold(f64::MIN, f64::max);
            assert_eq!(s.coalescence_time(i, j).unwrap(), direct);
        }
    }

    #[test]
    fn csv_dump() {
        let s = CoalescentSample::from_lengths(vec![1.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,length\n1,1\n2,3\n");
    }
}
