//! Seed selection, per-voter coarse clustering and Wilson-score fusion.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CompatibilityMatrix, CorrespondenceSet};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Fraction `v` of correspondences used as seeds.
    pub seed_ratio: f64,
    /// Lower bar `n` on the seed count.
    pub min_seeds: usize,
    pub nms_radius: f64,
    /// Feature-compatibility bandwidth `σ`.
    pub sigma: f64,
    /// Size `κ` of each hypothetical inlier set.
    pub kappa: usize,
    pub z: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            seed_ratio: 0.1,
            min_seeds: 1000,
            nms_radius: 0.1,
            sigma: 0.3,
            kappa: 40,
            z: 1.96,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.seed_ratio > 0.0 && self.seed_ratio <= 1.0) {
            return Err(Error::Config(format!("seed ratio must be in (0, 1], got {}", self.seed_ratio)));
        }
        if !(self.nms_radius >= 0.0 && self.nms_radius.is_finite()) {
            return Err(Error::Config(format!("NMS radius must be non-negative, got {}", self.nms_radius)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.kappa == 0 {
            return Err(Error::Config("kappa must be at least 1".into()));
        }
        if !(self.z >= 0.0 && self.z.is_finite()) {
            return Err(Error::Config(format!("z must be non-negative, got {}", self.z)));
        }
        Ok(())
    }
}

/// Seed indices sorted by descending confidence (lower index first on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    pub indices: Vec<usize>,
    pub confidences: Vec<f64>,
}

impl SeedSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Number of seeds for `n_total` correspondences: `min(N, max(⌊v·N⌋, n))`.
pub fn seed_count(n_total: usize, seed_ratio: f64, min_seeds: usize) -> usize {
    let by_ratio = (seed_ratio * n_total as f64).floor() as usize;
    by_ratio.max(min_seeds).min(n_total)
}

fn by_confidence(conf: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b))
}

/// Greedy non-maximum suppression on source points, by descending confidence.
///
/// If suppression leaves fewer candidates than the target count, suppressed
/// candidates are re-admitted in confidence order.
pub fn select_seeds(
    set: &CorrespondenceSet,
    confidences: &[f64],
    seed_ratio: f64,
    min_seeds: usize,
    nms_radius: f64,
) -> Result<SeedSet> {
    let n = set.len();
    if confidences.len() != n {
        return Err(Error::InvalidInput(format!("{} confidences for {n} correspondences", confidences.len())));
    }
    if confidences.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("seed confidences".into()));
    }
    if !(seed_ratio > 0.0 && seed_ratio <= 1.0) {
        return Err(Error::InvalidInput(format!("seed ratio must be in (0, 1], got {seed_ratio}")));
    }
    let target = seed_count(n, seed_ratio, min_seeds);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(by_confidence(confidences));

    let mut taken = vec![false; n];
    let mut chosen = Vec::with_capacity(target);
    for &c in &order {
        if chosen.len() == target {
            break;
        }
        let p = &set.items[c].source;
        let clear = chosen
            .iter()
            .all(|&s: &usize| (set.items[s].source - p).norm() >= nms_radius);
        if clear {
            chosen.push(c);
            taken[c] = true;
        }
    }
    for &c in &order {
        if chosen.len() == target {
            break;
        }
        if !taken[c] {
            chosen.push(c);
            taken[c] = true;
        }
    }
    chosen.sort_by(by_confidence(confidences));
    Ok(SeedSet {
        confidences: chosen.iter().map(|&i| confidences[i]).collect(),
        indices: chosen,
    })
}

/// Per-voter compatibility matrices `Sˡ`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoterCompatibility {
    pub voters: Vec<CompatibilityMatrix>,
}

/// `Sˡ_ij = clip(1 − (1 − cos(F̃ˡ_i, F̃ˡ_j))/σ², 0, 1) · β_ij` with unit diagonal.
/// Rows with zero norm have cosine 0 against everything.
pub fn voter_compatibility(voters: &[Matrix], beta: &CompatibilityMatrix, sigma: f64) -> Result<VoterCompatibility> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    let n = beta.size();
    let s2 = sigma * sigma;
    let mut out = Vec::with_capacity(voters.len());
    for (l, f) in voters.iter().enumerate() {
        if f.rows() != n {
            return Err(Error::shape(
                "voter_compatibility",
                format!("voter {l} has {} rows for {n} correspondences", f.rows()),
            ));
        }
        let unit = normalized_rows(f);
        out.push(CompatibilityMatrix::from_fn(n, |i, j| {
            if i == j {
                return 1.0;
            }
            let cos = match (&unit[i], &unit[j]) {
                (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum(),
                _ => 0.0,
            };
            (1.0 - (1.0 - cos) / s2).clamp(0.0, 1.0) * beta.get(i, j)
        }));
    }
    Ok(VoterCompatibility { voters: out })
}

pub(crate) fn normalized_rows(f: &Matrix) -> Vec<Option<Vec<f64>>> {
    (0..f.rows())
        .map(|i| {
            let r = f.row(i);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm > 0.0).then(|| r.iter().map(|v| v / norm).collect())
        })
        .collect()
}

/// `count` highest-scoring indices from `candidates`, best first, lower index
/// winning ties.
fn top_by_score(mut candidates: Vec<usize>, score: impl Fn(usize) -> f64, count: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| score(*b).total_cmp(&score(*a)).then(a.cmp(b));
    if count < candidates.len() {
        if count > 0 {
            candidates.select_nth_unstable_by(count - 1, cmp);
        }
        candidates.truncate(count);
    }
    candidates.sort_by(cmp);
    candidates
}

/// Hypothetical inlier sets, one per seed, each starting with its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct HypotheticalInliers {
    pub sets: Vec<Vec<usize>>,
}

/// For every voter and seed: `{seed} ∪` the `κ−1` most compatible other
/// correspondences in that voter's row.
pub fn coarse_vote(vc: &VoterCompatibility, seeds: &[usize], kappa: usize) -> Result<Vec<HypotheticalInliers>> {
    let n = vc.voters.first().map_or(0, CompatibilityMatrix::size);
    check_kappa(kappa, n)?;
    if let Some(&bad) = seeds.iter().find(|&&s| s >= n) {
        return Err(Error::InvalidInput(format!("seed {bad} out of range for {n} correspondences")));
    }
    Ok(vc
        .voters
        .iter()
        .map(|s| HypotheticalInliers {
            sets: seeds
                .par_iter()
                .map(|&i| {
                    let row = s.row(i);
                    let cands = (0..n).filter(|&j| j != i).collect();
                    let mut members = vec![i];
                    members.extend(top_by_score(cands, |j| row[j], kappa - 1));
                    members
                })
                .collect(),
        })
        .collect())
}

fn check_kappa(kappa: usize, n: usize) -> Result<()> {
    if kappa == 0 || kappa > n {
        return Err(Error::InvalidInput(format!("kappa = {kappa} with {n} correspondences")));
    }
    Ok(())
}

/// Lower Wilson bound for the acceptance rate of the first `n` voters.
///
/// Evaluated as `p̂² / (p̂ + z²/2n + z·√(p̂(1−p̂)/n + z²/4n²))`, an algebraically
/// equal form of the usual expression that is exact at `p̂ = 0`.
pub fn wilson_score(acceptances: &[bool], n: usize, z: f64) -> Result<f64> {
    if n == 0 || n > acceptances.len() {
        return Err(Error::InvalidInput(format!("wilson score over {n} of {} voters", acceptances.len())));
    }
    let hits = acceptances[..n].iter().filter(|&&a| a).count();
    Ok(wilson_from_rate(hits as f64 / n as f64, n, z))
}

pub(crate) fn wilson_from_rate(p: f64, n: usize, z: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let z2 = z * z;
    let spread = (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    p * p / (p + z2 / (2.0 * nf) + z * spread)
}

/// Final Wilson scores per seed; candidates not listed score 0.
#[derive(Debug, Clone, PartialEq)]
pub struct WilsonTable {
    /// `(candidate, W̃)` pairs sorted by candidate index.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl WilsonTable {
    pub fn score(&self, seed_pos: usize, j: usize) -> f64 {
        let row = &self.rows[seed_pos];
        row.binary_search_by_key(&j, |&(c, _)| c).map_or(0.0, |k| row[k].1)
    }
}

/// Fuses the voters' sets. Each candidate's acceptance sequence is read from
/// the last voter backwards, and `W̃ = max_n W(first n)`; the final set is the
/// seed plus the `κ−1` best candidates.
pub fn fine_cluster(votes: &[HypotheticalInliers], kappa: usize, z: f64) -> Result<(WilsonTable, HypotheticalInliers)> {
    let l = votes.len();
    if l == 0 {
        return Err(Error::InvalidInput("fine clustering needs at least one voter".into()));
    }
    let n_seeds = votes[0].sets.len();
    if votes.iter().any(|v| v.sets.len() != n_seeds) {
        return Err(Error::InvalidInput("voters disagree on the number of seeds".into()));
    }
    if kappa == 0 {
        return Err(Error::InvalidInput("kappa must be at least 1".into()));
    }
    let per_seed: Vec<(Vec<(usize, f64)>, Vec<usize>)> = (0..n_seeds)
        .into_par_iter()
        .map(|k| {
            let seed = votes[0].sets[k][0];
            let mut accept: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
            // position τ = 0 is the last voter
            for (tau, v) in votes.iter().rev().enumerate() {
                for &j in &v.sets[k][1..] {
                    accept.entry(j).or_insert_with(|| vec![false; l])[tau] = true;
                }
            }
            let row: Vec<(usize, f64)> = accept
                .into_iter()
                .map(|(j, acc)| {
                    let mut hits = 0usize;
                    let mut best = 0.0f64;
                    for (n, &a) in acc.iter().enumerate() {
                        hits += usize::from(a);
                        best = best.max(wilson_from_rate(hits as f64 / (n + 1) as f64, n + 1, z));
                    }
                    (j, best)
                })
                .collect();
            let cands = row.iter().map(|&(j, _)| j).collect();
            let lookup = |j: usize| row.binary_search_by_key(&j, |&(c, _)| c).map_or(0.0, |p| row[p].1);
            let mut members = vec![seed];
            members.extend(top_by_score(cands, lookup, kappa - 1));
            (row, members)
        })
        .collect();
    let (rows, sets) = per_seed.into_iter().unzip();
    Ok((WilsonTable { rows }, HypotheticalInliers { sets }))
}

/// Output of the full search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub seeds: SeedSet,
    pub compatibility: VoterCompatibility,
    pub coarse: Vec<HypotheticalInliers>,
    pub table: WilsonTable,
    pub fine: HypotheticalInliers,
}

pub fn search_inliers(
    set: &CorrespondenceSet,
    confidences: &[f64],
    voters: &[Matrix],
    beta: &CompatibilityMatrix,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    check_kappa(cfg.kappa, set.len())?;
    let seeds = select_seeds(set, confidences, cfg.seed_ratio, cfg.min_seeds, cfg.nms_radius)?;
    let compatibility = voter_compatibility(voters, beta, cfg.sigma)?;
    let coarse = coarse_vote(&compatibility, &seeds.indices, cfg.kappa)?;
    let (table, fine) = fine_cluster(&coarse, cfg.kappa, cfg.z)?;
    Ok(SearchResult {
        seeds,
        compatibility,
        coarse,
        table,
        fine,
    })
}

/// One line per (seed, candidate): its Wilson score and whether it was kept.
pub fn search_dump_csv(result: &SearchResult) -> String {
    let mut out = String::from("seed,candidate,wilson,selected\n");
    for (k, row) in result.table.rows.iter().enumerate() {
        let seed = result.seeds.indices[k];
        let members = &result.fine.sets[k];
        let _ = writeln!(out, "{seed},{seed},,1");
        for &(j, w) in row {
            let _ = writeln!(out, "{seed},{j},{w},{}", u8::from(members.contains(&j)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Correspondence, Point3};
    use proptest::prelude::*;

    fn line_set(n: usize) -> CorrespondenceSet {
        let items = (0..n)
            .map(|i| Correspondence::new(Point3::new(i as f64, 0.0, 0.0), Point3::zeros()))
            .collect();
        CorrespondenceSet::new(items, None, 0.1).unwrap()
    }

    #[test]
    fn seed_counts() {
        assert_eq!(seed_count(20000, 0.1, 1000), 2000);
        assert_eq!(seed_count(500, 0.1, 1000), 500);
        assert_eq!(seed_count(300, 0.1, 0), 30);
        assert_eq!(seed_count(300, 0.1, 200), 200);
        let conf: Vec<f64> = (0..500).map(|i| (i % 17) as f64).collect();
        let s = select_seeds(&line_set(500), &conf, 0.1, 1000, 0.5).unwrap();
        assert_eq!(s.len(), 500);
    }

    #[test]
    fn nms_keeps_the_more_confident_duplicate() {
        let mut set = line_set(3);
        set.items[1].source = set.items[0].source;
        let s = select_seeds(&set, &[0.2, 0.9, 0.5], 0.5, 1, 0.5).unwrap();
        assert_eq!(s.indices, vec![1]);
        // relaxation re-admits the suppressed one once the target needs it
        let s = select_seeds(&set, &[0.2, 0.9, 0.5], 1.0, 3, 0.5).unwrap();
        assert_eq!(s.indices, vec![1, 2, 0]);
        assert_eq!(s.confidences, vec![0.9, 0.5, 0.2]);
    }

    #[test]
    fn voter_compatibility_examples() {
        let f = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![(1.0 - 0.09f64), (1.0 - (1.0 - 0.09f64).powi(2)).sqrt()],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let ones = CompatibilityMatrix::from_fn(4, |_, _| 1.0);
        let vc = voter_compatibility(&[f.clone()], &ones, 0.3).unwrap();
        let s = &vc.voters[0];
        assert_eq!(s.get(0, 1), 1.0);
        // cos = 1 − σ² sits on the clip boundary
        assert!(s.get(0, 2).abs() < 1e-12);
        // zero-norm row: cos 0, clipped to 0, diagonal still 1
        assert_eq!(s.get(0, 3), 0.0);
        assert_eq!(s.get(3, 3), 1.0);
        let gated = CompatibilityMatrix::from_fn(4, |i, j| if i == j { 1.0 } else { 0.0 });
        let vc = voter_compatibility(&[f], &gated, 0.3).unwrap();
        assert_eq!(vc.voters[0].get(0, 1), 0.0);
    }

    #[test]
    fn coarse_vote_examples() {
        let s = CompatibilityMatrix::from_fn(6, |i, j| if i == j { 1.0 } else { 0.5 });
        let vc = VoterCompatibility { voters: vec![s] };
        let v = coarse_vote(&vc, &[3], 1).unwrap();
        assert_eq!(v[0].sets, vec![vec![3]]);
        // all-equal row: lowest indices win
        let v = coarse_vote(&vc, &[3], 4).unwrap();
        assert_eq!(v[0].sets, vec![vec![3, 0, 1, 2]]);
        assert!(coarse_vote(&vc, &[3], 7).is_err());
    }

    #[test]
    fn wilson_closed_forms() {
        let z = 1.96;
        for n in 1..=12 {
            assert_eq!(wilson_score(&vec![false; n], n, z).unwrap(), 0.0);
            let w = wilson_score(&vec![true; n], n, z).unwrap();
            assert!((w - n as f64 / (n as f64 + z * z)).abs() < 1e-12);
        }
        assert!((wilson_score(&[true], 1, z).unwrap() - 0.2066).abs() < 1e-4);
        assert!((wilson_score(&[true; 5], 5, z).unwrap() - 0.5655).abs() < 1e-4);
        assert!(wilson_score(&[true], 2, z).is_err());
    }

    #[test]
    fn wilson_matches_textbook_form() {
        let z = 1.96f64;
        for n in 1..=10usize {
            for hits in 0..=n {
                let p = hits as f64 / n as f64;
                let nf = n as f64;
                let text = (p + z * z / (2.0 * nf) - z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt()) / (1.0 + z * z / nf);
                assert!((wilson_from_rate(p, n, z) - text).abs() < 1e-12);
            }
        }
    }

    fn votes_for(sets_by_voter: Vec<Vec<usize>>) -> Vec<HypotheticalInliers> {
        sets_by_voter.into_iter().map(|s| HypotheticalInliers { sets: vec![s] }).collect()
    }

    #[test]
    fn fine_cluster_prefers_consistent_candidates() {
        let z = 1.96;
        // candidate 1 is accepted by all 3 voters, 2 only by the last one
        let votes = votes_for(vec![vec![0, 1, 3], vec![0, 1, 4], vec![0, 1, 2]]);
        let (t, fine) = fine_cluster(&votes, 2, z).unwrap();
        assert!((t.score(0, 1) - 3.0 / (3.0 + z * z)).abs() < 1e-12);
        assert!((t.score(0, 2) - 1.0 / (1.0 + z * z)).abs() < 1e-12);
        assert_eq!(t.score(0, 5), 0.0);
        assert_eq!(fine.sets, vec![vec![0, 1]]);
    }

    #[test]
    fn single_voter_reproduces_coarse_result() {
        let s = CompatibilityMatrix::from_fn(8, |i, j| if i == j { 1.0 } else { ((i * 3 + j * 5) % 7) as f64 / 7.0 });
        let vc = VoterCompatibility { voters: vec![s] };
        let coarse = coarse_vote(&vc, &[0, 4, 6], 4).unwrap();
        let (_, fine) = fine_cluster(&coarse, 4, 1.96).unwrap();
        for (a, b) in fine.sets.iter().zip(&coarse[0].sets) {
            let (mut a, mut b) = (a.clone(), b.clone());
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
    }

    fn sym(n: usize, vals: &[f64]) -> CompatibilityMatrix {
        CompatibilityMatrix::from_fn(n, |i, j| if i == j { 1.0 } else { vals[i.min(j) * n + i.max(j)] })
    }

    proptest! {
        #[test]
        fn coarse_vote_matches_full_sort(vals in prop::collection::vec(0u8..5, 100), seed in 0usize..10, kappa in 1usize..10) {
            let vals: Vec<f64> = vals.iter().map(|&v| v as f64 / 4.0).collect();
            let s = sym(10, &vals);
            let vc = VoterCompatibility { voters: vec![s.clone()] };
            let got = coarse_vote(&vc, &[seed], kappa).unwrap();
            let mut order: Vec<usize> = (0..10).filter(|&j| j != seed).collect();
            order.sort_by(|&a, &b| s.get(seed, b).partial_cmp(&s.get(seed, a)).unwrap().then(a.cmp(&b)));
            let mut expect = vec![seed];
            expect.extend(&order[..kappa - 1]);
            prop_assert_eq!(&got[0].sets[0], &expect);
        }

        #[test]
        fn hypothetical_sets_are_well_formed(vals in prop::collection::vec(0u8..5, 144), l in 1usize..4, kappa in 1usize..12) {
            let n = 12;
            let voters: Vec<CompatibilityMatrix> = (0..l)
                .map(|k| {
                    let shifted: Vec<f64> = vals.iter().map(|&v| ((v as usize + k) % 5) as f64 / 4.0).collect();
                    sym(n, &shifted)
                })
                .collect();
            let vc = VoterCompatibility { voters };
            let seeds = [0, 5, 11];
            let coarse = coarse_vote(&vc, &seeds, kappa).unwrap();
            let (table, fine) = fine_cluster(&coarse, kappa, 1.96).unwrap();
            for sets in coarse.iter().chain(std::iter::once(&fine)) {
                for (k, m) in sets.sets.iter().enumerate() {
                    prop_assert_eq!(m.len(), kappa);
                    prop_assert_eq!(m[0], seeds[k]);
                    let mut u = m.clone();
                    u.sort();
                    u.dedup();
                    prop_assert_eq!(u.len(), kappa);
                }
            }
            for row in &table.rows {
                for &(_, w) in row {
                    prop_assert!((0.0..=1.0).contains(&w));
                }
            }
        }

        #[test]
        fn wilson_bounds_and_monotonicity(n in 1usize..30, z in 0.0f64..4.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let wl = wilson_from_rate(lo, n, z);
            let wh = wilson_from_rate(hi, n, z);
            prop_assert!((0.0..=1.0).contains(&wl) && (0.0..=1.0).contains(&wh));
            prop_assert!(wl <= wh + 1e-15);
            if z > 0.0 {
                prop_assert!(wilson_from_rate(1.0, n + 1, z) > wilson_from_rate(1.0, n, z));
            }
        }

        #[test]
        fn duplicating_the_agreeing_last_voter_keeps_the_result(vals in prop::collection::vec(0u8..5, 144), kappa in 2usize..8) {
            // the last voter's full acceptance prefix already wins the max, so a
            // copy of it at the front of the order cannot change the selection
            let n = 12;
            let s = sym(n, &vals.iter().map(|&v| v as f64 / 4.0).collect::<Vec<_>>());
            let vc = VoterCompatibility { voters: vec![s.clone(), s] };
            let coarse = coarse_vote(&vc, &[2, 7], kappa).unwrap();
            let mut extended = coarse.clone();
            extended.push(coarse[1].clone());
            let (_, a) = fine_cluster(&coarse, kappa, 1.96).unwrap();
            let (_, b) = fine_cluster(&extended, kappa, 1.96).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn search_is_deterministic_and_dumps() {
        let set = line_set(30);
        let conf: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let feats = Matrix::from_fn(30, 4, |i, j| ((i + j) % 5) as f64 - 2.0);
        let beta = CompatibilityMatrix::from_fn(30, |i, j| if i == j { 1.0 } else { 0.5 });
        let cfg = SearchConfig {
            min_seeds: 5,
            kappa: 6,
            sigma: 1.0,
            ..Default::default()
        };
        let a = search_inliers(&set, &conf, &[feats.clone(), feats.clone()], &beta, &cfg).unwrap();
        let b = search_inliers(&set, &conf, &[feats.clone(), feats], &beta, &cfg).unwrap();
        assert_eq!(a, b);
        let csv = search_dump_csv(&a);
        assert!(csv.starts_with("seed,candidate,wilson,selected\n"));
        assert_eq!(csv.lines().filter(|l| l.ends_with(",1")).count(), 5 * 6);
    }
}
