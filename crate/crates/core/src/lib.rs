//! Stable matching on random partially connected markets.
//!
//! The crate generates random markets where each of `n + k` men ranks `d`
//! random women, runs man- and woman-proposing deferred acceptance with
//! trace instrumentation, and provides a deterministic parallel Monte Carlo
//! harness for rank and unmatched-count studies, threshold searches and
//! school-choice counterfactuals.

pub mod cli;
pub mod counterfactual;
pub mod da;
pub mod error;
pub mod experiments;
pub mod lazy;
pub mod market;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod table;
pub mod theory;

pub use counterfactual::{
    apply_single_tiebreak, load_programs, load_roster, perturb_population, randomize_preferences,
    run_counterfactual, run_student_da, summarize_assignment, Programs, Roster,
};
pub use da::{
    run_mosm, run_wosm, verify_order_independence, DaResult, Matching, RunTrace, Side, TraceOptions,
};
pub use error::{Error, Result};
pub use experiments::{
    find_threshold, run_replications, Engine, Harness, Metric, SummaryStats, ThresholdKind,
    ThresholdSpec,
};
pub use lazy::{run_mosm_lazy, sample_woman_rank, LazyOutcome};
pub use market::{generate_market, sample_d_subset, Market, MarketConfig};
pub use stats::{count_components, hop_fractions, summarize, RankSummary};
pub use table::{Format, Table};
