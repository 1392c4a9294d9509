//! Deferred acceptance with full trace instrumentation.
//!
//! Both engines follow the sequential McVitie-Wilson schedule: proposers enter
//! one at a time, and a rejection chain started by an entrant runs to
//! completion before the next proposer enters. Time `t` ticks once per
//! proposal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Market;

/// Which side makes the proposals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Men,
    Women,
}

/// A partial bijection between men and women. `None` means self-matched.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Matching {
    man_to_woman: Vec<Option<usize>>,
    woman_to_man: Vec<Option<usize>>,
}

impl Matching {
    pub fn empty(num_men: usize, num_women: usize) -> Self {
        Matching {
            man_to_woman: vec![None; num_men],
            woman_to_man: vec![None; num_women],
        }
    }

    /// Build from `(man, woman)` pairs. Fails if an agent appears twice.
    pub fn from_pairs(num_men: usize, num_women: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Matching::empty(num_men, num_women);
        for &(i, j) in pairs {
            if i >= num_men || j >= num_women {
                return Err(Error::InvalidInput(format!("pair ({i}, {j}) out of range")));
            }
            if m.man_to_woman[i].is_some() || m.woman_to_man[j].is_some() {
                return Err(Error::InvalidInput(format!(
                    "pair ({i}, {j}) reuses an agent"
                )));
            }
            m.man_to_woman[i] = Some(j);
            m.woman_to_man[j] = Some(i);
        }
        Ok(m)
    }

    pub fn num_men(&self) -> usize {
        self.man_to_woman.len()
    }

    pub fn num_women(&self) -> usize {
        self.woman_to_man.len()
    }

    pub fn wife(&self, i: usize) -> Option<usize> {
        self.man_to_woman[i]
    }

    pub fn husband(&self, j: usize) -> Option<usize> {
        self.woman_to_man[j]
    }

    pub fn man_to_woman(&self) -> &[Option<usize>] {
        &self.man_to_woman
    }

    pub fn woman_to_man(&self) -> &[Option<usize>] {
        &self.woman_to_man
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.man_to_woman
            .iter()
            .enumerate()
            .filter_map(|(i, w)| w.map(|j| (i, j)))
    }

    pub fn unmatched_men(&self) -> Vec<usize> {
        (0..self.num_men())
            .filter(|&i| self.man_to_woman[i].is_none())
            .collect()
    }

    pub fn unmatched_women(&self) -> Vec<usize> {
        (0..self.num_women())
            .filter(|&j| self.woman_to_man[j].is_none())
            .collect()
    }

    /// Checks sizes, mutual consistency and that every pair is an edge.
    pub fn check_against(&self, market: &Market) -> Result<()> {
        if self.num_men() != market.num_men() || self.num_women() != market.num_women() {
            return Err(Error::InvalidInput(format!(
                "matching is {}x{}, market is {}x{}",
                self.num_men(),
                self.num_women(),
                market.num_men(),
                market.num_women()
            )));
        }
        for (i, w) in self.man_to_woman.iter().enumerate() {
            if let Some(j) = *w {
                if j >= self.num_women() || self.woman_to_man[j] != Some(i) {
                    return Err(Error::InvalidInput(format!(
                        "man {i} -> woman {j} is not mutual"
                    )));
                }
                if !market.is_edge(i, j) {
                    return Err(Error::InvalidInput(format!(
                        "man {i} and woman {j} are matched but do not rank each other"
                    )));
                }
            }
        }
        for (j, h) in self.woman_to_man.iter().enumerate() {
            if let Some(i) = *h {
                if i >= self.num_men() || self.man_to_woman[i] != Some(j) {
                    return Err(Error::InvalidInput(format!(
                        "woman {j} -> man {i} is not mutual"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Instrumentation options.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceOptions {
    /// Record the unmatched-count series every `record_every` proposals.
    pub record_every: usize,
    /// Record the ex-ante acceptance probability before every proposal.
    pub record_acceptance: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            record_every: 1,
            record_acceptance: false,
        }
    }
}

/// What happened during one run of deferred acceptance.
///
/// `delta_m_series[x]` and `delta_w_series[x]` hold the counts at time
/// `x * record_every`, except the last entry which is always time `tau`.
/// The value at time `t` is the state after proposal `t` has been resolved,
/// including any proposer who ran out of list before proposal `t + 1`.
///
/// Under man-proposing DA `delta_m` counts men who exhausted their lists and
/// `delta_w` counts women never proposed to. Under woman-proposing DA the
/// roles swap: `delta_w` counts exhausted women and `delta_m` men never
/// proposed to. `w_counts[j]` is always the number of proposals involving
/// woman `j` (received or made), and `m_counts[i]` likewise for man `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub proposing: Side,
    pub tau: usize,
    pub record_every: usize,
    pub delta_m_series: Vec<usize>,
    pub delta_w_series: Vec<usize>,
    pub w_counts: Vec<usize>,
    pub m_counts: Vec<usize>,
    /// `acceptance_prob_series[t - 1]` is the ex-ante probability that
    /// proposal `t` is accepted.
    pub acceptance_prob_series: Option<Vec<f64>>,
}

impl RunTrace {
    /// Time stamp of series entry `idx`.
    pub fn time_at(&self, idx: usize) -> usize {
        if idx + 1 == self.delta_m_series.len() {
            self.tau
        } else {
            idx * self.record_every
        }
    }

    pub fn final_delta_m(&self) -> usize {
        *self
            .delta_m_series
            .last()
            .expect("series always has an entry")
    }

    pub fn final_delta_w(&self) -> usize {
        *self
            .delta_w_series
            .last()
            .expect("series always has an entry")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DaResult {
    pub matching: Matching,
    pub trace: RunTrace,
}

/// Man-proposing DA, men entering in ascending index order.
pub fn run_mosm(market: &Market) -> DaResult {
    run_mosm_traced(market, TraceOptions::default())
}

pub fn run_mosm_traced(market: &Market, opts: TraceOptions) -> DaResult {
    let order: Vec<usize> = (0..market.num_men()).collect();
    propose(&MenPropose(market), &order, opts)
}

/// Man-proposing DA with an explicit entry order.
pub fn run_mosm_with_order(market: &Market, order: &[usize]) -> Result<DaResult> {
    check_permutation(order, market.num_men())?;
    Ok(propose(&MenPropose(market), order, TraceOptions::default()))
}

/// Woman-proposing DA, women entering in ascending index order.
pub fn run_wosm(market: &Market) -> DaResult {
    run_wosm_traced(market, TraceOptions::default())
}

pub fn run_wosm_traced(market: &Market, opts: TraceOptions) -> DaResult {
    let order: Vec<usize> = (0..market.num_women()).collect();
    propose(&WomenPropose(market), &order, opts)
}

/// True iff every entry order yields the same man-proposing outcome.
pub fn verify_order_independence(market: &Market, orders: &[Vec<usize>]) -> Result<bool> {
    let mut first: Option<Matching> = None;
    let mut all_equal = true;
    for order in orders {
        let m = run_mosm_with_order(market, order)?.matching;
        match &first {
            None => first = Some(m),
            Some(f) => all_equal &= *f == m,
        }
    }
    Ok(all_equal)
}

fn check_permutation(order: &[usize], len: usize) -> Result<()> {
    if order.len() != len {
        return Err(Error::InvalidInput(format!(
            "entry order has {} entries, expected {len}",
            order.len()
        )));
    }
    let mut seen = vec![false; len];
    for &i in order {
        if i >= len || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidInput(format!(
                "entry order is not a permutation of 0..{len} (offending entry {i})"
            )));
        }
    }
    Ok(())
}

/// Proposer-side view of a market.
trait ProposalView {
    const SIDE: Side;
    fn num_proposers(&self) -> usize;
    fn num_receivers(&self) -> usize;
    fn list(&self, p: usize) -> &[u32];
    /// Rank the receiver at position `pos` of `p`'s list gives to `p`.
    fn receiver_rank(&self, p: usize, pos: usize) -> u32;
}

struct MenPropose<'a>(&'a Market);
struct WomenPropose<'a>(&'a Market);

impl ProposalView for MenPropose<'_> {
    const SIDE: Side = Side::Men;
    fn num_proposers(&self) -> usize {
        self.0.num_men()
    }
    fn num_receivers(&self) -> usize {
        self.0.num_women()
    }
    fn list(&self, p: usize) -> &[u32] {
        self.0.man_list(p)
    }
    fn receiver_rank(&self, p: usize, pos: usize) -> u32 {
        self.0.rank_by_woman_at(p, pos) as u32
    }
}

impl ProposalView for WomenPropose<'_> {
    const SIDE: Side = Side::Women;
    fn num_proposers(&self) -> usize {
        self.0.num_women()
    }
    fn num_receivers(&self) -> usize {
        self.0.num_men()
    }
    fn list(&self, p: usize) -> &[u32] {
        self.0.woman_list(p)
    }
    fn receiver_rank(&self, p: usize, pos: usize) -> u32 {
        self.0.rank_by_man_at(p, pos) as u32
    }
}

/// Records the two unmatched counts with optional decimation.
pub(crate) struct SeriesRecorder {
    every: usize,
    exhausted: Vec<usize>,
    untouched: Vec<usize>,
}

impl SeriesRecorder {
    pub(crate) fn new(every: usize) -> Self {
        SeriesRecorder {
            every: every.max(1),
            exhausted: Vec::new(),
            untouched: Vec::new(),
        }
    }

    /// Called right before proposal `t + 1` with the state at time `t`.
    pub(crate) fn before_proposal(&mut self, t: usize, exhausted: usize, untouched: usize) {
        if t.is_multiple_of(self.every) {
            self.exhausted.push(exhausted);
            self.untouched.push(untouched);
        }
    }

    pub(crate) fn finish(mut self, exhausted: usize, untouched: usize) -> (Vec<usize>, Vec<usize>) {
        self.exhausted.push(exhausted);
        self.untouched.push(untouched);
        (self.exhausted, self.untouched)
    }
}

/// Incrementally maintained sum of `1 / (w_j + 1)` over receivers.
pub(crate) struct AcceptanceTracker {
    sum: f64,
}

impl AcceptanceTracker {
    pub(crate) fn new(num_receivers: usize) -> Self {
        AcceptanceTracker {
            sum: num_receivers as f64,
        }
    }

    pub(crate) fn received(&mut self, before: usize) {
        self.sum += 1.0 / (before as f64 + 2.0) - 1.0 / (before as f64 + 1.0);
    }

    /// Mean acceptance probability over receivers not in `excluded`.
    pub(crate) fn ex_ante<I: Iterator<Item = usize>>(
        &self,
        num_receivers: usize,
        counts: &[usize],
        excluded: I,
    ) -> f64 {
        let mut s = self.sum;
        let mut m = 0usize;
        for j in excluded {
            s -= 1.0 / (counts[j] as f64 + 1.0);
            m += 1;
        }
        s / (num_receivers - m) as f64
    }
}

fn propose<V: ProposalView>(view: &V, order: &[usize], opts: TraceOptions) -> DaResult {
    let num_p = view.num_proposers();
    let num_r = view.num_receivers();
    let mut made = vec![0usize; num_p];
    let mut received = vec![0usize; num_r];
    let mut holder: Vec<Option<(usize, u32)>> = vec![None; num_r];
    let mut exhausted = 0usize;
    let mut untouched = num_r;
    let mut t = 0usize;
    let mut series = SeriesRecorder::new(opts.record_every);
    let mut acceptance = opts
        .record_acceptance
        .then(|| (AcceptanceTracker::new(num_r), Vec::new()));

    for &entrant in order {
        let mut p = entrant;
        loop {
            let list = view.list(p);
            let pos = made[p];
            if pos == list.len() {
                exhausted += 1;
                break;
            }
            series.before_proposal(t, exhausted, untouched);
            if let Some((tracker, probs)) = acceptance.as_mut() {
                let excluded = list[..pos].iter().map(|&r| r as usize);
                probs.push(tracker.ex_ante(num_r, &received, excluded));
            }
            made[p] += 1;
            t += 1;
            let r = list[pos] as usize;
            let rank = view.receiver_rank(p, pos);
            if let Some((tracker, _)) = acceptance.as_mut() {
                tracker.received(received[r]);
            }
            received[r] += 1;
            match holder[r] {
                None => {
                    holder[r] = Some((p, rank));
                    untouched -= 1;
                    break;
                }
                Some((current, current_rank)) => {
                    if rank < current_rank {
                        holder[r] = Some((p, rank));
                        p = current;
                    }
                }
            }
        }
    }
    let (exhausted_series, untouched_series) = series.finish(exhausted, untouched);

    let mut matching = match V::SIDE {
        Side::Men => Matching::empty(num_p, num_r),
        Side::Women => Matching::empty(num_r, num_p),
    };
    for (r, h) in holder.iter().enumerate() {
        if let Some((p, _)) = *h {
            let (i, j) = match V::SIDE {
                Side::Men => (p, r),
                Side::Women => (r, p),
            };
            matching.man_to_woman[i] = Some(j);
            matching.woman_to_man[j] = Some(i);
        }
    }
    let acceptance_prob_series = acceptance.map(|(_, probs)| probs);
    let trace = match V::SIDE {
        Side::Men => RunTrace {
            proposing: Side::Men,
            tau: t,
            record_every: opts.record_every.max(1),
            delta_m_series: exhausted_series,
            delta_w_series: untouched_series,
            w_counts: received,
            m_counts: made,
            acceptance_prob_series,
        },
        Side::Women => RunTrace {
            proposing: Side::Women,
            tau: t,
            record_every: opts.record_every.max(1),
            delta_m_series: untouched_series,
            delta_w_series: exhausted_series,
            w_counts: made,
            m_counts: received,
            acceptance_prob_series,
        },
    };
    DaResult { matching, trace }
}

/// `count` independent uniformly random entry orders over `0..len`.
pub fn random_orders<R: rand::Rng + ?Sized>(
    len: usize,
    count: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    (0..count)
        .map(|_| {
            let mut o: Vec<usize> = (0..len).collect();
            o.shuffle(rng);
            o
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketConfig;

    fn first_choice_market() -> Market {
        // man0: [A, B], man1: [B, A]; A: [0, 1], B: [1, 0]
        Market::from_lists(&[vec![0, 1], vec![1, 0]], &[vec![0, 1], vec![1, 0]]).unwrap()
    }

    #[test]
    fn everyone_gets_first_choice() {
        let m = first_choice_market();
        let r = run_mosm(&m);
        assert_eq!(r.matching.wife(0), Some(0));
        assert_eq!(r.matching.wife(1), Some(1));
        assert_eq!(r.trace.tau, 2);
        assert_eq!(r.trace.final_delta_m(), 0);
        assert_eq!(r.trace.final_delta_w(), 0);
        assert_eq!(r.trace.delta_w_series, vec![2, 1, 0]);
        assert_eq!(run_wosm(&m).matching, r.matching);
    }

    #[test]
    fn two_men_one_woman() {
        let m = Market::generate(&MarketConfig::new(1, 1, 1, 3).unwrap()).unwrap();
        let r = run_mosm(&m);
        assert_eq!(r.matching.unmatched_men().len(), 1);
        assert_eq!(r.trace.final_delta_m(), 1);
        assert_eq!(r.trace.final_delta_w(), 0);
        assert_eq!(r.trace.tau, 2);
        let w = run_wosm(&m);
        assert_eq!(w.matching.unmatched_men(), r.matching.unmatched_men());
        assert_eq!(w.trace.final_delta_m(), w.trace.final_delta_w() + 1);
    }

    #[test]
    fn cyclic_market_poles_differ() {
        // men: [A,B], [B,A]; women: A: [1,0], B: [0,1]
        let m = Market::from_lists(&[vec![0, 1], vec![1, 0]], &[vec![1, 0], vec![0, 1]]).unwrap();
        let mosm = run_mosm(&m).matching;
        let wosm = run_wosm(&m).matching;
        assert_eq!(mosm.wife(0), Some(0));
        assert_eq!(wosm.wife(0), Some(1));
    }

    #[test]
    fn empty_side_terminates_immediately() {
        let m = Market::generate(&MarketConfig::new(3, -3, 2, 0).unwrap()).unwrap();
        let r = run_mosm(&m);
        assert_eq!(r.trace.tau, 0);
        assert_eq!(r.trace.delta_m_series, vec![0]);
        assert_eq!(r.trace.delta_w_series, vec![3]);
    }

    #[test]
    fn order_independence_small_cases() {
        let m = first_choice_market();
        assert!(verify_order_independence(&m, &[vec![0, 1], vec![1, 0]]).unwrap());
        let single = Market::from_lists(&[vec![0]], &[vec![0]]).unwrap();
        assert!(verify_order_independence(&single, &[vec![0]]).unwrap());
        assert!(matches!(
            verify_order_independence(&m, &[vec![0, 0]]),
            Err(Error::InvalidInput(_))
        ));
        assert!(verify_order_independence(&m, &[vec![0]]).is_err());
    }

    #[test]
    fn decimated_series_keeps_endpoints() {
        let m = Market::generate(&MarketConfig::new(60, 0, 5, 1).unwrap()).unwrap();
        let full = run_mosm(&m).trace;
        let dec = run_mosm_traced(
            &m,
            TraceOptions {
                record_every: 7,
                record_acceptance: false,
            },
        )
        .trace;
        assert_eq!(full.tau, dec.tau);
        for idx in 0..dec.delta_m_series.len() {
            let t = dec.time_at(idx);
            assert_eq!(dec.delta_m_series[idx], full.delta_m_series[t]);
            assert_eq!(dec.delta_w_series[idx], full.delta_w_series[t]);
        }
        assert_eq!(dec.final_delta_m(), full.final_delta_m());
    }

    #[test]
    fn acceptance_probabilities_match_direct_computation() {
        let m = Market::generate(&MarketConfig::new(15, 0, 4, 8).unwrap()).unwrap();
        let opts = TraceOptions {
            record_every: 1,
            record_acceptance: true,
        };
        let r = run_mosm_traced(&m, opts);
        let probs = r.trace.acceptance_prob_series.clone().unwrap();
        assert_eq!(probs.len(), r.trace.tau);
        // Replay: recompute p_t by brute force over the same proposal sequence.
        let mut made = vec![0usize; m.num_men()];
        let mut received = vec![0usize; m.num_women()];
        let mut holder: Vec<Option<(usize, usize)>> = vec![None; m.num_women()];
        let mut t = 0;
        for entrant in 0..m.num_men() {
            let mut p = entrant;
            while made[p] < m.man_degree(p) {
                let pos = made[p];
                let proposed: Vec<usize> =
                    m.man_list(p)[..pos].iter().map(|&x| x as usize).collect();
                let cand: Vec<usize> = (0..m.num_women())
                    .filter(|j| !proposed.contains(j))
                    .collect();
                let p_t = cand
                    .iter()
                    .map(|&j| 1.0 / (received[j] as f64 + 1.0))
                    .sum::<f64>()
                    / cand.len() as f64;
                assert!((p_t - probs[t]).abs() < 1e-9);
                t += 1;
                made[p] += 1;
                let j = m.man_list(p)[pos] as usize;
                let rank = m.rank_by_woman_at(p, pos);
                received[j] += 1;
                match holder[j] {
                    None => {
                        holder[j] = Some((p, rank));
                        break;
                    }
                    Some((h, hr)) if rank < hr => {
                        holder[j] = Some((p, rank));
                        p = h;
                    }
                    _ => {}
                }
            }
        }
        assert_eq!(t, r.trace.tau);
    }
}
