//! Independent checks: blocking pairs, exhaustive stable-matching
//! enumeration, and the balls-into-bins process.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::da::Matching;
use crate::error::{Error, Result};
use crate::market::Market;

/// Largest side size accepted by [`enumerate_stable_matchings`].
pub const ENUMERATION_LIMIT: usize = 10;

/// Returns a pair `(man, woman)` that blocks `matching`, if any. Being
/// unmatched is worse than any listed partner.
pub fn find_blocking_pair(market: &Market, matching: &Matching) -> Option<(usize, usize)> {
    let mut woman_partner_rank: Vec<usize> = (0..market.num_women())
        .map(|j| market.woman_degree(j) + 1)
        .collect();
    for (i, j) in matching.pairs() {
        woman_partner_rank[j] = market
            .woman_rank(j, i)
            .expect("matched pair must be an edge");
    }
    for i in 0..market.num_men() {
        let limit = match matching.wife(i) {
            Some(j) => market.man_rank(i, j).expect("matched pair must be an edge") - 1,
            None => market.man_degree(i),
        };
        for (pos, &j) in market.man_list(i)[..limit].iter().enumerate() {
            if market.rank_by_woman_at(i, pos) < woman_partner_rank[j as usize] {
                return Some((i, j as usize));
            }
        }
    }
    None
}

/// Sum over men of their partner's rank, unmatched counting as list length + 1.
pub fn men_rank_total(market: &Market, matching: &Matching) -> usize {
    (0..market.num_men())
        .map(|i| match matching.wife(i) {
            Some(j) => market.man_rank(i, j).unwrap_or(usize::MAX / 2),
            None => market.man_degree(i) + 1,
        })
        .sum()
}

/// All stable matchings, sorted by the men's total rank (ties broken by the
/// matching itself). The first entry is man-optimal, the last woman-optimal.
pub fn enumerate_stable_matchings(market: &Market) -> Result<Vec<Matching>> {
    let agents = market.num_men().max(market.num_women());
    if agents > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            agents,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut search = Search {
        market,
        wife: vec![None; market.num_men()],
        husband: vec![None; market.num_women()],
        found: Vec::new(),
    };
    search.descend(0);
    let mut found = search.found;
    found.sort_by_cached_key(|m| (men_rank_total(market, m), m.clone()));
    Ok(found)
}

struct Search<'a> {
    market: &'a Market,
    wife: Vec<Option<usize>>,
    husband: Vec<Option<usize>>,
    found: Vec<Matching>,
}

impl Search<'_> {
    fn man_choice_rank(&self, i: usize) -> usize {
        match self.wife[i] {
            Some(j) => self.market.man_rank(i, j).unwrap(),
            None => self.market.man_degree(i) + 1,
        }
    }

    /// Whether fixing man `i`'s choice creates a blocking pair among the
    /// men `0..=i`, all of whose choices are now final.
    fn creates_block(&self, i: usize) -> bool {
        let m = self.market;
        let my_rank = self.man_choice_rank(i);
        // (i, j) where j is held by an earlier man she likes less than i.
        for (pos, &j) in m.man_list(i)[..my_rank - 1].iter().enumerate() {
            if let Some(h) = self.husband[j as usize] {
                if h != i && m.rank_by_woman_at(i, pos) < m.woman_rank(j as usize, h).unwrap() {
                    return true;
                }
            }
        }
        // (h, j) where j is i's new partner and an earlier man h prefers her.
        if let Some(j) = self.wife[i] {
            let rank_of_i = m.woman_rank(j, i).unwrap();
            for h in 0..i {
                if let Some(rank_of_h) = m.woman_rank(j, h) {
                    if rank_of_h < rank_of_i && m.man_rank(h, j).unwrap() < self.man_choice_rank(h)
                    {
                        return true;
                    }
                }
            }
        }
        false
    }

    fn descend(&mut self, i: usize) {
        let m = self.market;
        if i == m.num_men() {
            let pairs: Vec<(usize, usize)> = self
                .wife
                .iter()
                .enumerate()
                .filter_map(|(a, w)| w.map(|b| (a, b)))
                .collect();
            let matching = Matching::from_pairs(m.num_men(), m.num_women(), &pairs)
                .expect("search keeps the matching injective");
            if find_blocking_pair(m, &matching).is_none() {
                self.found.push(matching);
            }
            return;
        }
        for &j in m.man_list(i) {
            let j = j as usize;
            if self.husband[j].is_some() {
                continue;
            }
            self.wife[i] = Some(j);
            self.husband[j] = Some(i);
            if !self.creates_block(i) {
                self.descend(i + 1);
            }
            self.wife[i] = None;
            self.husband[j] = None;
        }
        if !self.creates_block(i) {
            self.descend(i + 1);
        }
    }
}

/// Tally of a randomized comparison between deferred acceptance and
/// exhaustive enumeration.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossCheckReport {
    pub instances: usize,
    pub mosm_mismatches: usize,
    pub wosm_mismatches: usize,
    pub blocking_pairs: usize,
    /// Instances whose stable matchings disagree on who is unmatched.
    pub unmatched_set_violations: usize,
}

impl CrossCheckReport {
    pub fn passed(&self) -> bool {
        self.mosm_mismatches == 0
            && self.wosm_mismatches == 0
            && self.blocking_pairs == 0
            && self.unmatched_set_violations == 0
    }
}

/// Draw `instances` random markets with `1 <= n <= max_n`, `|k| <= max_abs_k`
/// (at least one man) and `1 <= d <= n`, and compare both DA poles with the
/// enumerated stable set.
pub fn cross_check_small_markets(
    instances: usize,
    max_n: usize,
    max_abs_k: usize,
    seed: u64,
) -> Result<CrossCheckReport> {
    if max_n == 0 || max_n + max_abs_k > ENUMERATION_LIMIT {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= max_n and max_n + max_abs_k <= {ENUMERATION_LIMIT}"
        )));
    }
    let mut report = CrossCheckReport::default();
    let mut rng = crate::rng::rng_from_seed(seed);
    for idx in 0..instances {
        let n = rng.random_range(1..=max_n);
        let k_lo = -(max_abs_k.min(n - 1) as i64);
        let k = rng.random_range(k_lo..=max_abs_k as i64);
        let d = rng.random_range(1..=n);
        let cfg = crate::market::MarketConfig::new(
            n,
            k,
            d,
            crate::rng::derive_seed(seed, &[idx as u64]),
        )?;
        let market = Market::generate(&cfg)?;
        let stable = enumerate_stable_matchings(&market)?;
        let mosm = crate::da::run_mosm(&market).matching;
        let wosm = crate::da::run_wosm(&market).matching;
        report.instances += 1;
        report.mosm_mismatches += usize::from(stable.first() != Some(&mosm));
        report.wosm_mismatches += usize::from(stable.last() != Some(&wosm));
        report.blocking_pairs += usize::from(find_blocking_pair(&market, &mosm).is_some())
            + usize::from(find_blocking_pair(&market, &wosm).is_some());
        let (men, women) = (mosm.unmatched_men(), mosm.unmatched_women());
        report.unmatched_set_violations += usize::from(
            stable
                .iter()
                .any(|m| m.unmatched_men() != men || m.unmatched_women() != women),
        );
    }
    Ok(report)
}

/// Final bin loads of a balls-into-bins run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCounts {
    pub counts: Vec<usize>,
    pub empty: usize,
}

/// Throw `balls` balls independently and uniformly into `bins` bins.
pub fn balls_into_bins<R: Rng + ?Sized>(
    balls: usize,
    bins: usize,
    rng: &mut R,
) -> Result<BinCounts> {
    if bins == 0 {
        return Err(Error::InvalidInput("need at least one bin".into()));
    }
    let mut counts = vec![0usize; bins];
    for _ in 0..balls {
        counts[rng.random_range(0..bins)] += 1;
    }
    let empty = counts.iter().filter(|&&c| c == 0).count();
    Ok(BinCounts { counts, empty })
}

/// Expected fraction of empty bins, `(1 - 1/n)^T`.
pub fn expected_empty_fraction(balls: usize, bins: usize) -> f64 {
    (1.0 - 1.0 / bins as f64).powf(balls as f64)
}

/// Exact mean of `(1/n) Σ 1/(W_j + 1)`: `(n/(T+1)) (1 - (1 - 1/n)^(T+1))`.
pub fn reciprocal_sum_mean(balls: usize, bins: usize) -> f64 {
    let n = bins as f64;
    let t = balls as f64;
    n / (t + 1.0) * (1.0 - (1.0 - 1.0 / n).powf(t + 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReciprocalSumReport {
    pub runs: usize,
    /// Empirical mean of `(1/n) Σ 1/(W_j + 1)` over runs.
    pub mean: f64,
    /// Standard error of `mean`.
    pub std_error: f64,
    /// Exact expectation.
    pub reference: f64,
    /// The `n / T` level the statistic concentrates below.
    pub bound: f64,
}

pub fn reciprocal_sum_check<R: Rng + ?Sized>(
    balls: usize,
    bins: usize,
    runs: usize,
    rng: &mut R,
) -> Result<ReciprocalSumReport> {
    if balls == 0 {
        return Err(Error::InvalidInput("need at least one ball".into()));
    }
    if runs == 0 {
        return Err(Error::InvalidInput("need at least one run".into()));
    }
    let mut values = Vec::with_capacity(runs);
    for _ in 0..runs {
        let b = balls_into_bins(balls, bins, rng)?;
        let s: f64 = b.counts.iter().map(|&w| 1.0 / (w as f64 + 1.0)).sum();
        values.push(s / bins as f64);
    }
    let mean = values.iter().sum::<f64>() / runs as f64;
    let var = if runs > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs - 1) as f64
    } else {
        0.0
    };
    Ok(ReciprocalSumReport {
        runs,
        mean,
        std_error: (var / runs as f64).sqrt(),
        reference: reciprocal_sum_mean(balls, bins),
        bound: bins as f64 / balls as f64,
    })
}

/// Number of uniform draws until all `n` coupons have been seen.
pub fn coupon_collector_draws<R: Rng + ?Sized>(n: usize, rng: &mut R) -> usize {
    let mut seen = vec![false; n];
    let mut missing = n;
    let mut draws = 0;
    while missing > 0 {
        draws += 1;
        if !std::mem::replace(&mut seen[rng.random_range(0..n)], true) {
            missing -= 1;
        }
    }
    draws
}
