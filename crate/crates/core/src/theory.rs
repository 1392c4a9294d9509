//! Closed-form predictions for average ranks and unmatched counts.
//!
//! All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `d` below `log² n`: both sides near `sqrt(d)`.
    Moderate,
    /// `d` above `log² n` with men on the short side.
    Dense,
    /// Complete lists, `d = n`.
    Complete,
}

/// Optional error envelope attached to a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Envelope {
    /// Ranks within `± rank` of the prediction; unmatched counts within a
    /// factor `exp(± log_count)`.
    Symmetric { rank: f64, log_count: f64 },
    /// One-sided quantitative bounds for the dense regime.
    Bounds {
        r_men_upper: f64,
        r_women_lower: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub r_men: f64,
    pub r_women: f64,
    /// Expected number of unmatched women.
    pub delta: f64,
    pub regime: Regime,
    pub envelope: Option<Envelope>,
}

/// `R_MEN ≈ R_WOMEN ≈ sqrt(d)` and `δ ≈ n exp(-sqrt(d))`.
pub fn predict_moderate(n: usize, d: usize) -> Prediction {
    let d = d as f64;
    let root = d.sqrt();
    Prediction {
        r_men: root,
        r_women: root,
        delta: n as f64 * (-root).exp(),
        regime: Regime::Moderate,
        envelope: Some(Envelope::Symmetric {
            rank: d.powf(0.3),
            log_count: 2.5 * d.powf(0.25),
        }),
    }
}

/// `R_MEN ≈ log n`, `R_WOMEN ≈ d / log n`, all men matched.
pub fn predict_dense(n: usize, k: i64, d: usize) -> Prediction {
    let nf = n as f64;
    let log_n = nf.ln();
    let df = d as f64;
    let abs_k = k.unsigned_abs() as f64;
    Prediction {
        r_men: log_n,
        r_women: df / log_n,
        delta: abs_k,
        regime: Regime::Dense,
        envelope: Some(Envelope::Bounds {
            r_men_upper: (1.0 + 2.0 * abs_k / nf + 2.0 / log_n.sqrt()) * log_n,
            r_women_lower: (1.0 - 6.0 * nf.powf(-0.125) - 6.0 * df / nf) * df / log_n,
        }),
    }
}

/// Complete-market bound: `R_MEN ≤ (1+ε)(n/(n+k)) log(n/|k|)` and
/// `R_WOMEN ≥ (n+k) / (1 + that)`, for `-n/2 ≤ k ≤ -1`.
pub fn predict_complete(n: usize, k: i64, eps: f64) -> Result<Prediction> {
    if k >= 0 {
        return Err(Error::InvalidConfig(format!(
            "complete-market bound needs men on the short side (k < 0), got k={k}"
        )));
    }
    if 2 * k.unsigned_abs() > n as u64 {
        return Err(Error::InvalidConfig(format!(
            "complete-market bound needs |k| <= n/2, got k={k}, n={n}"
        )));
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "eps must be non-negative, got {eps}"
        )));
    }
    let nf = n as f64;
    let men = nf + k as f64;
    let abs_k = k.unsigned_abs() as f64;
    let r_men = (1.0 + eps) * (nf / men) * (nf / abs_k).ln();
    Ok(Prediction {
        r_men,
        r_women: men / (1.0 + r_men),
        delta: abs_k,
        regime: Regime::Complete,
        envelope: None,
    })
}

/// Pick the prediction matching `(n, k, d)`: complete lists with men short
/// use the complete-market bound at `ε = 0`, `d ≤ log² n` the moderate
/// curves, anything denser the dense curves.
pub fn predict(n: usize, k: i64, d: usize) -> Prediction {
    if d == n && k < 0 && 2 * k.unsigned_abs() <= n as u64 {
        if let Ok(p) = predict_complete(n, k, 0.0) {
            return p;
        }
    }
    let log_n = (n as f64).ln();
    if (d as f64) <= log_n * log_n {
        predict_moderate(n, d)
    } else {
        predict_dense(n, k, d)
    }
}

/// Coupon-collector tail: `P(draws ≥ β n log n) ≤ n^(1-β)` for `β > 1`.
pub fn coupon_collector_tail(n: usize, beta: f64) -> Result<f64> {
    if beta.is_nan() || beta <= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "beta must exceed 1, got {beta}"
        )));
    }
    Ok((n as f64).powf(1.0 - beta))
}
