//! Random partially connected two-sided markets.
//!
//! A market has `n + k` men and `n` women. Every man ranks a uniformly random
//! set of exactly `d` women in uniformly random order, and every woman ranks
//! the men who listed her in uniformly random order. Men and women are
//! indexed from zero.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Parameters of one random market draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarketConfig {
    /// Number of women.
    pub n: usize,
    /// Imbalance: there are `n + k` men.
    pub k: i64,
    /// Length of every man's preference list.
    pub d: usize,
    pub seed: u64,
}

impl MarketConfig {
    pub fn new(n: usize, k: i64, d: usize, seed: u64) -> Result<Self> {
        let cfg = MarketConfig { n, k, d, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if self.d == 0 || self.d > self.n {
            return Err(Error::InvalidConfig(format!(
                "d must satisfy 1 <= d <= n (got d={}, n={})",
                self.d, self.n
            )));
        }
        if (self.n as i64) + self.k < 0 {
            return Err(Error::InvalidConfig(format!(
                "n + k must be non-negative (got n={}, k={})",
                self.n, self.k
            )));
        }
        Ok(())
    }

    pub fn num_men(&self) -> usize {
        (self.n as i64 + self.k) as usize
    }

    pub fn with_seed(self, seed: u64) -> Self {
        MarketConfig { seed, ..self }
    }
}

/// Draw `d` distinct indices from `0..n`, uniformly over subsets and with a
/// uniformly random emission order.
pub fn sample_d_subset<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Vec<usize>> {
    if d == 0 || d > n {
        return Err(Error::InvalidConfig(format!(
            "subset size must satisfy 1 <= d <= n (got d={d}, n={n})"
        )));
    }
    Ok(rand::seq::index::sample(rng, n, d).into_vec())
}

/// Materialized preference structure of a two-sided market.
///
/// Both sides are stored as flat adjacency arrays. Each edge additionally
/// carries the rank the agent on the *other* side assigns to it, which makes
/// every rank lookup along an edge constant time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Market {
    num_women: usize,
    man_offsets: Vec<usize>,
    man_lists: Vec<u32>,
    /// For man-edge `e = (i, j)`: the 1-based rank of `i` in `j`'s list.
    rank_by_woman: Vec<u32>,
    woman_offsets: Vec<usize>,
    woman_lists: Vec<u32>,
    /// For woman-edge `f = (j, i)`: the 1-based rank of `j` in `i`'s list.
    rank_by_man: Vec<u32>,
}

impl Market {
    /// Build a market from explicit preference lists.
    ///
    /// `men[i]` lists women in decreasing preference, `women[j]` lists men in
    /// decreasing preference. Each side must rank exactly the agents that rank
    /// it, with no repeats.
    pub fn from_lists(men: &[Vec<usize>], women: &[Vec<usize>]) -> Result<Self> {
        let num_women = women.len();
        let mut man_offsets = Vec::with_capacity(men.len() + 1);
        let mut man_lists = Vec::new();
        let mut edge_of: HashMap<(usize, usize), usize> = HashMap::new();
        man_offsets.push(0);
        for (i, list) in men.iter().enumerate() {
            for &j in list {
                if j >= num_women {
                    return Err(Error::InvalidInput(format!(
                        "man {i} lists woman {j}, but there are only {num_women} women"
                    )));
                }
                if edge_of.insert((i, j), man_lists.len()).is_some() {
                    return Err(Error::InvalidInput(format!(
                        "man {i} lists woman {j} twice"
                    )));
                }
                man_lists.push(j as u32);
            }
            man_offsets.push(man_lists.len());
        }

        let mut woman_offsets = Vec::with_capacity(num_women + 1);
        let mut woman_lists = Vec::with_capacity(man_lists.len());
        let mut source_edge = Vec::with_capacity(man_lists.len());
        woman_offsets.push(0);
        for (j, list) in women.iter().enumerate() {
            for &i in list {
                let e = edge_of.remove(&(i, j)).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "woman {j} lists man {i}, who does not list her (or is listed twice)"
                    ))
                })?;
                woman_lists.push(i as u32);
                source_edge.push(e);
            }
            woman_offsets.push(woman_lists.len());
        }
        if let Some((&(i, j), _)) = edge_of.iter().min() {
            return Err(Error::InvalidInput(format!(
                "man {i} lists woman {j}, who does not list him"
            )));
        }
        Ok(Self::assemble(
            num_women,
            man_offsets,
            man_lists,
            woman_offsets,
            woman_lists,
            &source_edge,
        ))
    }

    /// `source_edge[f]` is the man-edge index of woman-edge `f`.
    fn assemble(
        num_women: usize,
        man_offsets: Vec<usize>,
        man_lists: Vec<u32>,
        woman_offsets: Vec<usize>,
        woman_lists: Vec<u32>,
        source_edge: &[usize],
    ) -> Self {
        let mut rank_by_woman = vec![0u32; man_lists.len()];
        let mut rank_by_man = vec![0u32; woman_lists.len()];
        for j in 0..num_women {
            let start = woman_offsets[j];
            for f in start..woman_offsets[j + 1] {
                let e = source_edge[f];
                let i = woman_lists[f] as usize;
                rank_by_woman[e] = (f - start + 1) as u32;
                rank_by_man[f] = (e - man_offsets[i] + 1) as u32;
            }
        }
        Market {
            num_women,
            man_offsets,
            man_lists,
            rank_by_woman,
            woman_offsets,
            woman_lists,
            rank_by_man,
        }
    }

    /// Draw a market using a stream seeded from `cfg.seed`.
    pub fn generate(cfg: &MarketConfig) -> Result<Self> {
        generate_market(cfg, &mut rng_from_seed(cfg.seed))
    }

    pub fn num_men(&self) -> usize {
        self.man_offsets.len() - 1
    }

    pub fn num_women(&self) -> usize {
        self.num_women
    }

    pub fn num_edges(&self) -> usize {
        self.man_lists.len()
    }

    /// Man `i`'s preference list, most preferred first.
    pub fn man_list(&self, i: usize) -> &[u32] {
        &self.man_lists[self.man_offsets[i]..self.man_offsets[i + 1]]
    }

    /// Woman `j`'s priority list over her neighbors, most preferred first.
    pub fn woman_list(&self, j: usize) -> &[u32] {
        &self.woman_lists[self.woman_offsets[j]..self.woman_offsets[j + 1]]
    }

    pub fn man_degree(&self, i: usize) -> usize {
        self.man_offsets[i + 1] - self.man_offsets[i]
    }

    pub fn woman_degree(&self, j: usize) -> usize {
        self.woman_offsets[j + 1] - self.woman_offsets[j]
    }

    /// Rank (1-based) that the woman at position `pos` of man `i`'s list
    /// gives to `i`.
    pub fn rank_by_woman_at(&self, i: usize, pos: usize) -> usize {
        self.rank_by_woman[self.man_offsets[i] + pos] as usize
    }

    /// Rank (1-based) that the man at position `pos` of woman `j`'s list
    /// gives to `j`.
    pub fn rank_by_man_at(&self, j: usize, pos: usize) -> usize {
        self.rank_by_man[self.woman_offsets[j] + pos] as usize
    }

    /// `Rank_i(j)`: position of woman `j` in man `i`'s list, 1-based.
    pub fn man_rank(&self, i: usize, j: usize) -> Option<usize> {
        self.man_list(i)
            .iter()
            .position(|&w| w as usize == j)
            .map(|p| p + 1)
    }

    /// `Rank_j(i)`: position of man `i` in woman `j`'s list, 1-based.
    pub fn woman_rank(&self, j: usize, i: usize) -> Option<usize> {
        let pos = self.man_list(i).iter().position(|&w| w as usize == j)?;
        Some(self.rank_by_woman_at(i, pos))
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.man_rank(i, j).is_some()
    }

    /// Owned copies of both sides' lists, 0-based.
    pub fn to_lists(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let men = (0..self.num_men())
            .map(|i| self.man_list(i).iter().map(|&j| j as usize).collect())
            .collect();
        let women = (0..self.num_women)
            .map(|j| self.woman_list(j).iter().map(|&i| i as usize).collect())
            .collect();
        (men, women)
    }
}

/// Draw a random market.
///
/// Men draw their lists in index order, then every woman's list is shuffled
/// in index order, all from the same stream.
pub fn generate_market<R: Rng + ?Sized>(cfg: &MarketConfig, rng: &mut R) -> Result<Market> {
    cfg.validate()?;
    let num_men = cfg.num_men();
    let n = cfg.n;
    let d = cfg.d;

    let mut man_lists = Vec::with_capacity(num_men * d);
    let mut woman_degree = vec![0usize; n];
    for _ in 0..num_men {
        for j in sample_d_subset(n, d, rng)? {
            woman_degree[j] += 1;
            man_lists.push(j as u32);
        }
    }
    let man_offsets: Vec<usize> = (0..=num_men).map(|i| i * d).collect();

    let mut woman_offsets = Vec::with_capacity(n + 1);
    woman_offsets.push(0);
    for &deg in &woman_degree {
        woman_offsets.push(woman_offsets.last().unwrap() + deg);
    }
    let mut cursor = woman_offsets[..n].to_vec();
    // woman-edge -> man-edge
    let mut source_edge = vec![0usize; man_lists.len()];
    for (e, &j) in man_lists.iter().enumerate() {
        let slot = &mut cursor[j as usize];
        source_edge[*slot] = e;
        *slot += 1;
    }
    for j in 0..n {
        source_edge[woman_offsets[j]..woman_offsets[j + 1]].shuffle(rng);
    }
    let woman_lists = source_edge.iter().map(|&e| (e / d) as u32).collect();

    Ok(Market::assemble(
        n,
        man_offsets,
        man_lists,
        woman_offsets,
        woman_lists,
        &source_edge,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn cfg(n: usize, k: i64, d: usize, seed: u64) -> MarketConfig {
        MarketConfig::new(n, k, d, seed).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(MarketConfig::new(0, 0, 1, 0).is_err());
        assert!(MarketConfig::new(3, 0, 0, 0).is_err());
        assert!(MarketConfig::new(3, 0, 4, 0).is_err());
        assert!(MarketConfig::new(3, -4, 1, 0).is_err());
        assert!(MarketConfig::new(3, -3, 1, 0).is_ok());
        assert_eq!(MarketConfig::new(3, 2, 1, 0).unwrap().num_men(), 5);
    }

    #[test]
    fn subset_edge_cases() {
        let mut rng = rng_from_seed(1);
        let mut full = sample_d_subset(5, 5, &mut rng).unwrap();
        full.sort();
        assert_eq!(full, vec![0, 1, 2, 3, 4]);
        assert_eq!(sample_d_subset(1, 1, &mut rng).unwrap(), vec![0]);
        assert!(matches!(
            sample_d_subset(3, 4, &mut rng),
            Err(Error::InvalidConfig(_))
        ));
        assert!(sample_d_subset(3, 0, &mut rng).is_err());
    }

    #[test]
    fn subset_pairs_are_uniform() {
        // 6 unordered pairs from 4 items; chi-square with 5 degrees of freedom.
        let mut rng = rng_from_seed(42);
        let draws = 100_000;
        let mut counts = [[0u32; 4]; 4];
        for _ in 0..draws {
            let mut s = sample_d_subset(4, 2, &mut rng).unwrap();
            s.sort();
            counts[s[0]][s[1]] += 1;
        }
        let expected = draws as f64 / 6.0;
        let sigma = (draws as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        let mut chi2 = 0.0;
        for (a, row) in counts.iter().enumerate() {
            for (b, &c) in row.iter().enumerate().skip(a + 1) {
                let c = c as f64;
                assert!(
                    (c - expected).abs() < 3.0 * sigma,
                    "pair ({a},{b}) drawn {c} times"
                );
                chi2 += (c - expected).powi(2) / expected;
            }
        }
        // 0.999 quantile of chi-square(5) is 20.52
        assert!(chi2 < 20.52, "chi2 = {chi2}");
    }

    #[test]
    fn subset_emission_order_is_uniform() {
        let mut rng = rng_from_seed(3);
        let mut first = [0u32; 3];
        for _ in 0..30_000 {
            first[sample_d_subset(3, 3, &mut rng).unwrap()[0]] += 1;
        }
        let sigma = (30_000.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in first {
            assert!((c as f64 - 10_000.0).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn single_pair_market() {
        let m = Market::generate(&cfg(1, 0, 1, 9)).unwrap();
        assert_eq!(m.man_list(0), &[0]);
        assert_eq!(m.woman_list(0), &[0]);
        assert_eq!(m.man_rank(0, 0), Some(1));
        assert_eq!(m.woman_rank(0, 0), Some(1));
    }

    #[test]
    fn complete_market_when_d_equals_n() {
        for seed in 0..20 {
            let m = Market::generate(&cfg(4, 2, 4, seed)).unwrap();
            for j in 0..4 {
                assert_eq!(m.woman_degree(j), 6);
                let mut l = m.woman_list(j).to_vec();
                l.sort();
                assert_eq!(l, vec![0, 1, 2, 3, 4, 5]);
            }
        }
    }

    #[test]
    fn inverse_ranks_agree_with_lists() {
        let m = Market::generate(&cfg(30, -3, 6, 5)).unwrap();
        let mut total = 0;
        for j in 0..m.num_women() {
            total += m.woman_degree(j);
            for (q, &i) in m.woman_list(j).iter().enumerate() {
                let i = i as usize;
                assert_eq!(m.woman_rank(j, i), Some(q + 1));
                let r = m.rank_by_man_at(j, q);
                assert_eq!(m.man_list(i)[r - 1] as usize, j);
            }
        }
        assert_eq!(total, 27 * 6);
        for i in 0..m.num_men() {
            for (p, &j) in m.man_list(i).iter().enumerate() {
                let r = m.rank_by_woman_at(i, p);
                assert_eq!(m.woman_list(j as usize)[r - 1] as usize, i);
            }
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let c = cfg(200, 5, 12, 77);
        assert_eq!(Market::generate(&c).unwrap(), Market::generate(&c).unwrap());
        assert_ne!(
            Market::generate(&c).unwrap(),
            Market::generate(&c.with_seed(78)).unwrap()
        );
    }

    #[test]
    fn from_lists_round_trip_and_rejections() {
        let m = Market::generate(&cfg(7, 1, 3, 11)).unwrap();
        let (men, women) = m.to_lists();
        assert_eq!(Market::from_lists(&men, &women).unwrap(), m);

        let bad = Market::from_lists(&[vec![0, 0]], &[vec![0]]);
        assert!(bad.is_err());
        let missing = Market::from_lists(&[vec![0, 1]], &[vec![0], vec![]]);
        assert!(missing.is_err());
        let extra = Market::from_lists(&[vec![0]], &[vec![0], vec![0]]);
        assert!(extra.is_err());
        let out_of_range = Market::from_lists(&[vec![2]], &[vec![0]]);
        assert!(out_of_range.is_err());
    }

    #[test]
    fn woman_degree_moments_match_binomial() {
        // |M_j| ~ Binomial(n+k, d/n): mean d(n+k)/n, variance (n+k)(d/n)(1-d/n).
        let (n, d, seeds) = (1000usize, 10usize, 100u64);
        let p = d as f64 / n as f64;
        let mean_true = n as f64 * p;
        let var_true = n as f64 * p * (1.0 - p);
        let mut degrees = Vec::with_capacity(n * seeds as usize);
        for seed in 0..seeds {
            let m = Market::generate(&cfg(n, 0, d, seed)).unwrap();
            degrees.extend((0..n).map(|j| m.woman_degree(j) as f64));
        }
        let count = degrees.len() as f64;
        let mean = degrees.iter().sum::<f64>() / count;
        let var = degrees.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0);
        // Per-seed totals are exactly (n+k)d, so the pooled mean is exact.
        assert!((mean - mean_true).abs() < 1e-9);
        // sd of the sample variance ~ sqrt((mu4 - sigma^4) / N); mu4 ~ 3 sigma^4 + sigma^2.
        let se_var = ((3.0 * var_true * var_true + var_true - var_true * var_true) / count).sqrt();
        assert!(
            (var - var_true).abs() < 3.0 * se_var,
            "variance {var} vs {var_true} (se {se_var})"
        );
    }
}
