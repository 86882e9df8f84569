//! Infinite-sites Poisson mutation overlay and the statistics built on it:
//! site frequency spectrum, haplotype classes / allele frequency spectrum,
//! the genealogy-conditional spectrum θ·L_k, the no-extra-mutation scan, and
//! brute-force oracles.

use crate::genealogy::CoalescentSample;
use crate::scale::{BranchLength, ScaleModel};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MutationError {
    #[error("mutation rate must be finite and >= 0, got {0}")]
    InvalidRate(f64),
    #[error("overlay was built on a different sample")]
    MismatchedOverlay,
    #[error("invalid mutation heights: {0}")]
    InvalidHeights(String),
}

/// Poisson mutations laid on a sample at rate `theta` per unit branch length.
///
/// `heights[i]` are the strictly increasing mutation heights on branch `i`;
/// branch 0 (the infinite stem) is confined to `(0, Y_n)` since higher
/// mutations are carried by the whole sample and polymorphic for no one.
#[derive(Debug, Clone)]
pub struct MutationOverlay {
    n: usize,
    theta: f64,
    heights: Vec<Vec<f64>>,
}

/// Identity of the youngest mutation visible from an individual; individuals
/// with none share the single `Ancestral` class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HaplotypeKey {
    Ancestral,
    Site { branch: usize, rank: usize },
}

/// Site frequency spectrum: `counts[k - 1] = S_n(k)`, `total = S_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSpectrum {
    pub counts: Vec<u64>,
    pub total: u64,
}

/// Allele frequency spectrum: `counts[k - 1] = A_n(k)`, `total = A_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlleleSpectrum {
    pub counts: Vec<u64>,
    pub total: u64,
}

/// One pair per scanned individual carrying no extra mutation: the individual
/// index and its own branch length.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaScan {
    pub pairs: Vec<(usize, f64)>,
}

fn write_spectrum_csv<W: std::io::Write>(
    counts: &[u64],
    total: u64,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "k,count")?;
    for (idx, &c) in counts.iter().enumerate() {
        if c != 0 {
            writeln!(out, "{},{}", idx + 1, c)?;
        }
    }
    writeln!(out, "TOTAL,{total}")
}

impl SiteSpectrum {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        write_spectrum_csv(&self.counts, self.total, out)
    }
}

impl AlleleSpectrum {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        write_spectrum_csv(&self.counts, self.total, out)
    }
}

fn poisson_count<R: Rng>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive finite rate").sample(rng) as u64
}

/// Sorted uniform heights on `(0, cap)`, resampled in the (measure-zero)
/// event of a tie so heights are strictly increasing.
fn sorted_uniform_heights<R: Rng>(count: u64, cap: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let mut heights: Vec<f64> = (0..count).map(|_| rng.gen::<f64>() * cap).collect();
        heights.sort_by(f64::total_cmp);
        let distinct = heights.windows(2).all(|w| w[0] < w[1]);
        if distinct && heights.first().map_or(true, |&h| h > 0.0) {
            return heights;
        }
    }
}

impl MutationOverlay {
    /// Lay Poisson(θ·length) mutations on every branch of the sample.
    pub fn generate<R: Rng>(
        sample: &CoalescentSample,
        theta: f64,
        rng: &mut R,
    ) -> Result<Self, MutationError> {
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(MutationError::InvalidRate(theta));
        }
        let n = sample.n();
        let mut heights = Vec::with_capacity(n);
        let stem_cap = if n >= 2 { sample.y_max() } else { 0.0 };
        let stem_count = poisson_count(theta * stem_cap, rng);
        heights.push(sorted_uniform_heights(stem_count, stem_cap, rng));
        for i in 1..n {
            let cap = sample.length(i);
            let count = poisson_count(theta * cap, rng);
            heights.push(sorted_uniform_heights(count, cap, rng));
        }
        Ok(Self { n, theta, heights })
    }

    /// Build an overlay from explicit heights (fixtures and tests).
    pub fn from_heights(
        sample: &CoalescentSample,
        theta: f64,
        heights: Vec<Vec<f64>>,
    ) -> Result<Self, MutationError> {
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(MutationError::InvalidRate(theta));
        }
        let n = sample.n();
        if heights.len() != n {
            return Err(MutationError::InvalidHeights(format!(
                "expected {} branches, got {}",
                n,
                heights.len()
            )));
        }
        for (i, hs) in heights.iter().enumerate() {
            let cap = if i == 0 {
                if n >= 2 {
                    sample.y_max()
                } else {
                    0.0
                }
            } else {
                sample.length(i)
            };
            let in_range = hs.iter().all(|&h| h > 0.0 && h < cap);
            let increasing = hs.windows(2).all(|w| w[0] < w[1]);
            if !in_range || !increasing {
                return Err(MutationError::InvalidHeights(format!(
                    "branch {i}: heights must be strictly increasing in (0, {cap})"
                )));
            }
        }
        Ok(Self { n, theta, heights })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Mutation heights on branch `i`.
    pub fn branch_heights(&self, i: usize) -> &[f64] {
        &self.heights[i]
    }

    pub fn total_mutations(&self) -> u64 {
        self.heights.iter().map(|h| h.len() as u64).sum()
    }

    fn check(&self, sample: &CoalescentSample) -> Result<(), MutationError> {
        if self.n == sample.n() {
            Ok(())
        } else {
            Err(MutationError::MismatchedOverlay)
        }
    }
}

/// Site frequency spectrum of the overlay: each mutation at height `x` on
/// branch `i` is carried by `carrier_count(i, x)` individuals. One merged
/// walk of heights against carrier intervals per branch.
pub fn site_spectrum(
    sample: &CoalescentSample,
    overlay: &MutationOverlay,
) -> Result<SiteSpectrum, MutationError> {
    overlay.check(sample)?;
    let n = sample.n();
    let mut counts = vec![0u64; n.saturating_sub(1)];
    for i in 0..n {
        let hs = overlay.branch_heights(i);
        if hs.is_empty() {
            continue;
        }
        let mut pos = 0;
        for iv in sample.carrier_intervals(i).expect("branch in range") {
            while pos < hs.len() && hs[pos] <= iv.hi {
                counts[iv.count - 1] += 1;
                pos += 1;
            }
            if pos == hs.len() {
                break;
            }
        }
        debug_assert_eq!(pos, hs.len());
    }
    let total = counts.iter().sum();
    Ok(SiteSpectrum { counts, total })
}

/// Genealogy-conditional spectrum expectation `θ·L_1 .. θ·L_{n-1}` — a
/// Rao–Blackwellized estimate of the spectrum with smaller variance than a
/// Poisson realization.
pub fn expected_spectrum_given_tree(sample: &CoalescentSample, theta: f64) -> Vec<f64> {
    sample
        .subtending_measures()
        .iter()
        .map(|l| theta * l)
        .collect()
}

/// Youngest mutation visible from each individual.
///
/// Individual `j` sees its own branch on `(0, H_j)` and then each successive
/// left record `r` on `(running max, H_r)`, finishing with branch 0 above the
/// running max. The first mutation encountered this way is the youngest
/// visible one and fully determines the haplotype; individuals with none
/// share the ancestral class.
pub fn haplotype_keys(
    sample: &CoalescentSample,
    overlay: &MutationOverlay,
) -> Result<Vec<HaplotypeKey>, MutationError> {
    overlay.check(sample)?;
    let n = sample.n();
    let mut keys = Vec::with_capacity(n);
    for j in 0..n {
        keys.push(youngest_visible(sample, overlay, j, false).0);
    }
    Ok(keys)
}

/// Walk the record chain from individual `j` and return the first visible
/// mutation key. With `skip_stem` the walk stops before branch 0 (used by the
/// scan, where stem mutations are shared with individual 0 by construction).
fn youngest_visible(
    sample: &CoalescentSample,
    overlay: &MutationOverlay,
    j: usize,
    skip_stem: bool,
) -> (HaplotypeKey, f64) {
    let mut running_max = 0.0f64;
    let mut cur = j;
    loop {
        if cur == 0 {
            if !skip_stem {
                let hs = overlay.branch_heights(0);
                let pos = hs.partition_point(|&h| h <= running_max);
                if pos < hs.len() {
                    return (HaplotypeKey::Site { branch: 0, rank: pos }, running_max);
                }
            }
            return (HaplotypeKey::Ancestral, running_max);
        }
        let hs = overlay.branch_heights(cur);
        let pos = hs.partition_point(|&h| h <= running_max);
        if pos < hs.len() {
            // Stored heights already lie below H_cur, the upper window edge.
            return (HaplotypeKey::Site { branch: cur, rank: pos }, running_max);
        }
        running_max = sample.length(cur);
        cur = sample.prev_taller(cur);
    }
}

/// Group haplotype keys into the allele frequency spectrum.
pub fn allele_spectrum(keys: &[HaplotypeKey]) -> AlleleSpectrum {
    let n = keys.len();
    let mut groups: HashMap<HaplotypeKey, usize> = HashMap::new();
    for &k in keys {
        *groups.entry(k).or_insert(0) += 1;
    }
    let mut counts = vec![0u64; n];
    for &size in groups.values() {
        counts[size - 1] += 1;
    }
    AlleleSpectrum {
        counts,
        total: groups.len() as u64,
    }
}

/// Scan individuals `1, 2, ..`, keep each one that carries no mutation
/// beyond those of individual 0, and emit `(i, h)` where `h` is the
/// divergence time from the previously kept individual (individual 0 at
/// first). The kept individuals form a coalescent point process of their
/// own, and `h` is its branch length — the maximum original branch over the
/// skipped gap, not the branch at `i` itself. Stops after `max_pairs`.
pub fn theta_scan(
    sample: &CoalescentSample,
    overlay: &MutationOverlay,
    max_pairs: usize,
) -> Result<ThetaScan, MutationError> {
    overlay.check(sample)?;
    let mut pairs = Vec::new();
    let mut prev = 0usize;
    for i in 1..sample.n() {
        if pairs.len() == max_pairs {
            break;
        }
        let (key, _) = youngest_visible(sample, overlay, i, true);
        if key == HaplotypeKey::Ancestral {
            let h = sample
                .coalescence_time(prev, i)
                .expect("indices are in range");
            pairs.push((i, h));
            prev = i;
        }
    }
    Ok(ThetaScan { pairs })
}

/// Literal evaluation of the definitions in `O(n² + n·M)`: every mutation's
/// carrier block by linear scan, every individual's full mutation set for
/// haplotype grouping. The oracle the fast paths are checked against.
pub fn brute_force_check(
    sample: &CoalescentSample,
    overlay: &MutationOverlay,
) -> Result<(SiteSpectrum, AlleleSpectrum), MutationError> {
    overlay.check(sample)?;
    let n = sample.n();
    let mut site_counts = vec![0u64; n.saturating_sub(1)];
    // mutation_sets[j] = sorted list of (branch, rank) carried by individual j.
    let mut mutation_sets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for i in 0..n {
        for (rank, &x) in overlay.branch_heights(i).iter().enumerate() {
            // Carriers are i..j-1 where j is the first later branch at least
            // as tall as the mutation.
            let mut j = i + 1;
            while j < n && sample.length(j) < x {
                j += 1;
            }
            site_counts[j - i - 1] += 1;
            for carrier in i..j {
                mutation_sets[carrier].push((i, rank));
            }
        }
    }
    let site_total = site_counts.iter().sum();

    let mut groups: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    for mut set in mutation_sets {
        set.sort_unstable();
        *groups.entry(set).or_insert(0) += 1;
    }
    let mut allele_counts = vec![0u64; n];
    for &size in groups.values() {
        allele_counts[size - 1] += 1;
    }
    let allele_total = groups.len() as u64;
    Ok((
        SiteSpectrum {
            counts: site_counts,
            total: site_total,
        },
        AlleleSpectrum {
            counts: allele_counts,
            total: allele_total,
        },
    ))
}

/// Total polymorphic site count `S_n` for one replicate, without
/// materializing the genealogy: `Σ_i Poisson(θ·H_i) + Poisson(θ·Y_n)`.
/// Memory O(1); used by the large-n experiments.
pub fn poisson_site_count<R: Rng>(
    model: &ScaleModel,
    n: usize,
    theta: f64,
    rng: &mut R,
) -> Result<u64, crate::genealogy::GenealogyError> {
    use crate::genealogy::GenealogyError;
    if model.defect_mass() > 0.0 {
        return Err(GenealogyError::DefectiveBranchLaw);
    }
    let mut total = 0u64;
    let mut y_max = 0.0f64;
    for _ in 1..n {
        let mut u: f64 = rng.gen();
        while u <= 0.0 {
            u = rng.gen();
        }
        let h = match model.sample_branch_length(u) {
            BranchLength::Finite(h) => h,
            BranchLength::Infinite => return Err(GenealogyError::DefectiveBranchLaw),
        };
        y_max = y_max.max(h);
        total += poisson_count(theta * h, rng);
    }
    total += poisson_count(theta * y_max, rng);
    Ok(total)
}
