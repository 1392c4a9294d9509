//! Average ranks, unmatched counts and connectivity measures.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::da::Matching;
use crate::error::Result;
use crate::lazy::LazyOutcome;
use crate::market::Market;

/// Average ranks and unmatched counts of a matching.
///
/// An unmatched agent counts as one more than the length of its own list.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    /// Men's average rank of wives, over all men.
    pub r_men: f64,
    /// Women's average rank of husbands, over all women.
    pub r_women: f64,
    pub delta_m: usize,
    pub delta_w: usize,
}

pub fn summarize(market: &Market, matching: &Matching) -> Result<RankSummary> {
    matching.check_against(market)?;
    let mut men_total = 0usize;
    let mut delta_m = 0usize;
    for i in 0..market.num_men() {
        match matching.wife(i) {
            Some(j) => men_total += market.man_rank(i, j).expect("checked edge"),
            None => {
                delta_m += 1;
                men_total += market.man_degree(i) + 1;
            }
        }
    }
    let mut women_total = 0usize;
    let mut delta_w = 0usize;
    for j in 0..market.num_women() {
        match matching.husband(j) {
            Some(i) => women_total += market.woman_rank(j, i).expect("checked edge"),
            None => {
                delta_w += 1;
                women_total += market.woman_degree(j) + 1;
            }
        }
    }
    Ok(RankSummary {
        r_men: mean_of(men_total, market.num_men()),
        r_women: mean_of(women_total, market.num_women()),
        delta_m,
        delta_w,
    })
}

/// Same quantities for a lazily revealed run.
pub fn summarize_lazy(outcome: &LazyOutcome) -> RankSummary {
    let matching = &outcome.result.matching;
    let num_men = matching.num_men();
    let mut men_total = 0usize;
    let mut delta_m = 0usize;
    for i in 0..num_men {
        match outcome.man_rank(i) {
            Some(r) => men_total += r,
            None => {
                delta_m += 1;
                men_total += outcome.d + 1;
            }
        }
    }
    let mut women_total = 0usize;
    let mut delta_w = 0usize;
    for (j, rank) in outcome.woman_ranks.iter().enumerate() {
        match rank {
            Some(r) => women_total += r,
            None => {
                delta_w += 1;
                women_total += outcome.woman_degrees[j] + 1;
            }
        }
    }
    RankSummary {
        r_men: mean_of(men_total, num_men),
        r_women: mean_of(women_total, matching.num_women()),
        delta_m,
        delta_w,
    }
}

// An empty side has average rank 0 by convention.
fn mean_of(total: usize, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

/// Connected components of the bipartite agent graph. Agents with empty
/// lists are components of their own.
pub fn count_components(market: &Market) -> usize {
    let num_men = market.num_men();
    let num_women = market.num_women();
    let mut parent: Vec<usize> = (0..num_men + num_women).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = num_men + num_women;
    for i in 0..num_men {
        for &j in market.man_list(i) {
            let a = find(&mut parent, i);
            let b = find(&mut parent, num_men + j as usize);
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
    }
    components
}

/// Cumulative fraction of (source, other man) pairs within `h` hops, for
/// `h = 1..=max_hops`. Two men are one hop apart when they list a common
/// woman. Sources are `sample` men drawn without replacement.
pub fn hop_fractions<R: Rng + ?Sized>(
    market: &Market,
    sample: usize,
    max_hops: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let num_men = market.num_men();
    if sample > num_men {
        return Err(crate::Error::InvalidInput(format!(
            "cannot sample {sample} sources from {num_men} men"
        )));
    }
    if max_hops == 0 {
        return Err(crate::Error::InvalidInput(
            "max_hops must be at least 1".into(),
        ));
    }
    let mut within = vec![0u64; max_hops];
    if num_men < 2 || sample == 0 {
        return Ok(vec![0.0; max_hops]);
    }
    let sources = rand::seq::index::sample(rng, num_men, sample);

    let mut dist = vec![u32::MAX; num_men];
    let mut woman_seen = vec![false; market.num_women()];
    let mut touched_women = Vec::new();
    let mut queue = VecDeque::new();
    let mut visited = Vec::new();
    for s in sources.iter() {
        dist[s] = 0;
        visited.push(s);
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let du = dist[u];
            if du as usize >= max_hops {
                continue;
            }
            for &j in market.man_list(u) {
                let j = j as usize;
                if std::mem::replace(&mut woman_seen[j], true) {
                    continue;
                }
                touched_women.push(j);
                for &v in market.woman_list(j) {
                    let v = v as usize;
                    if dist[v] == u32::MAX {
                        dist[v] = du + 1;
                        within[du as usize] += 1;
                        visited.push(v);
                        queue.push_back(v);
                    }
                }
            }
        }
        for v in visited.drain(..) {
            dist[v] = u32::MAX;
        }
        for j in touched_women.drain(..) {
            woman_seen[j] = false;
        }
    }
    let pairs = (sample * (num_men - 1)) as f64;
    let mut cumulative = 0u64;
    Ok(within
        .iter()
        .map(|&c| {
            cumulative += c;
            cumulative as f64 / pairs
        })
        .collect())
}
