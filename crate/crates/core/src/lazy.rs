//! Coin-flipping man-proposing DA.
//!
//! Preferences are revealed only when the algorithm reads them: a proposing
//! man picks a uniformly random woman among those he has not yet proposed
//! to, and a matched woman who has already received `v` proposals prefers
//! the newcomer with probability `1 / (v + 1)`. The output has the same
//! distribution as running [`crate::da::run_mosm`] on a freshly generated
//! market.
//!
//! After termination the unrevealed tails of the men's lists are drawn to
//! obtain each woman's degree, and each matched woman's rank of her husband
//! is sampled from its conditional law given how many of her suitors
//! proposed before and after termination.

use std::collections::HashSet;

use rand::Rng;

use crate::da::{DaResult, Matching, RunTrace, SeriesRecorder, Side, TraceOptions};
use crate::error::{Error, Result};
use crate::market::MarketConfig;

/// Result of a lazy run together with the ranks revealed after termination.
#[derive(Clone, Debug, PartialEq)]
pub struct LazyOutcome {
    pub result: DaResult,
    /// List length `d` shared by all men.
    pub d: usize,
    /// Number of men listing each woman, `|M_j|`.
    pub woman_degrees: Vec<usize>,
    /// Rank each matched woman gives her husband; `None` when unmatched.
    pub woman_ranks: Vec<Option<usize>>,
}

impl LazyOutcome {
    /// Rank each matched man gives his wife: the number of proposals he made.
    pub fn man_rank(&self, i: usize) -> Option<usize> {
        self.result
            .matching
            .wife(i)
            .map(|_| self.result.trace.m_counts[i])
    }
}

/// Women a single man has proposed to.
struct Proposed {
    set: HashSet<u32>,
}

impl Proposed {
    fn new() -> Self {
        Proposed {
            set: HashSet::new(),
        }
    }

    /// Uniform draw among women not yet in the set; inserts the draw.
    fn draw_fresh<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> u32 {
        if self.set.len() * 2 <= n {
            loop {
                let j = rng.random_range(0..n) as u32;
                if self.set.insert(j) {
                    return j;
                }
            }
        }
        let free = n - self.set.len();
        let mut target = rng.random_range(0..free);
        for j in 0..n as u32 {
            if !self.set.contains(&j) {
                if target == 0 {
                    self.set.insert(j);
                    return j;
                }
                target -= 1;
            }
        }
        unreachable!("complement has {free} elements")
    }
}

/// Man-proposing DA on a random market whose preferences are revealed lazily.
pub fn run_mosm_lazy<R: Rng + ?Sized>(cfg: &MarketConfig, rng: &mut R) -> Result<LazyOutcome> {
    run_mosm_lazy_traced(cfg, rng, TraceOptions::default())
}

pub fn run_mosm_lazy_traced<R: Rng + ?Sized>(
    cfg: &MarketConfig,
    rng: &mut R,
    opts: TraceOptions,
) -> Result<LazyOutcome> {
    cfg.validate()?;
    let n = cfg.n;
    let d = cfg.d;
    let num_men = cfg.num_men();

    let mut proposed: Vec<Proposed> = (0..num_men).map(|_| Proposed::new()).collect();
    let mut made = vec![0usize; num_men];
    let mut received = vec![0usize; n];
    let mut husband: Vec<Option<usize>> = vec![None; n];
    let mut exhausted = 0usize;
    let mut untouched = n;
    let mut t = 0usize;
    let mut series = SeriesRecorder::new(opts.record_every);
    let mut probs = opts.record_acceptance.then(Vec::new);

    for entrant in 0..num_men {
        let mut i = entrant;
        loop {
            if made[i] == d {
                exhausted += 1;
                break;
            }
            series.before_proposal(t, exhausted, untouched);
            if let Some(p) = probs.as_mut() {
                p.push(ex_ante(&received, &proposed[i].set));
            }
            let j = proposed[i].draw_fresh(n, rng) as usize;
            made[i] += 1;
            t += 1;
            let prior = received[j];
            received[j] += 1;
            match husband[j] {
                None => {
                    husband[j] = Some(i);
                    untouched -= 1;
                    break;
                }
                Some(h) => {
                    if rng.random_bool(1.0 / (prior as f64 + 1.0)) {
                        husband[j] = Some(i);
                        i = h;
                    }
                }
            }
        }
    }
    let (delta_m_series, delta_w_series) = series.finish(exhausted, untouched);

    // Reveal the rest of each man's list to obtain the women's degrees.
    let mut degrees = received.clone();
    for (i, set) in proposed.iter_mut().enumerate() {
        for _ in made[i]..d {
            degrees[set.draw_fresh(n, rng) as usize] += 1;
        }
    }

    let mut pairs = Vec::new();
    let mut woman_ranks = vec![None; n];
    for j in 0..n {
        if let Some(i) = husband[j] {
            pairs.push((i, j));
            woman_ranks[j] = Some(sample_woman_rank(received[j], degrees[j], rng)?);
        }
    }
    let matching = Matching::from_pairs(num_men, n, &pairs)?;

    let trace = RunTrace {
        proposing: Side::Men,
        tau: t,
        record_every: opts.record_every.max(1),
        delta_m_series,
        delta_w_series,
        w_counts: received,
        m_counts: made,
        acceptance_prob_series: probs,
    };
    Ok(LazyOutcome {
        result: DaResult { matching, trace },
        d,
        woman_degrees: degrees,
        woman_ranks,
    })
}

fn ex_ante(received: &[usize], excluded: &HashSet<u32>) -> f64 {
    let n = received.len();
    let total: f64 = received
        .iter()
        .enumerate()
        .filter(|(j, _)| !excluded.contains(&(*j as u32)))
        .map(|(_, &w)| 1.0 / (w as f64 + 1.0))
        .sum();
    total / (n - excluded.len()) as f64
}

/// Rank a woman gives her husband, given that she received `received`
/// proposals before termination out of `degree` suitors in total.
///
/// Her husband is the best of the first `received` suitors. With suitors'
/// merits i.i.d. uniform, his merit `V` is the maximum of `received`
/// uniforms, and each of the `degree - received` later suitors outranks him
/// independently when its own uniform exceeds `V`.
pub fn sample_woman_rank<R: Rng + ?Sized>(
    received: usize,
    degree: usize,
    rng: &mut R,
) -> Result<usize> {
    if received == 0 {
        return Err(Error::InvalidInput(
            "a woman with no proposals is unmatched and has no husband rank".into(),
        ));
    }
    if received > degree {
        return Err(Error::InvalidInput(format!(
            "received {received} proposals but has only {degree} suitors"
        )));
    }
    let best = (0..received)
        .map(|_| rng.random::<f64>())
        .fold(0.0f64, f64::max);
    let above = (0..degree - received)
        .filter(|_| rng.random::<f64>() > best)
        .count();
    Ok(1 + above)
}
