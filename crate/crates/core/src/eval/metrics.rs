use crate::error::{Error, Result};

fn check_finite(scores: &[f64], what: &str) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("{what} scores")));
    }
    Ok(())
}

/// Fraction of positives scoring at or above the `k`-th best negative.
pub fn hits_at_k(pos: &[f64], neg: &[f64], k: usize) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument("hits@k needs positive and negative scores".into()));
    }
    if k == 0 || k > neg.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={} negatives",
            neg.len()
        )));
    }
    check_finite(pos, "positive")?;
    check_finite(neg, "negative")?;
    let mut sorted = neg.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let threshold = *kth;
    let hits = pos.iter().filter(|&&p| p >= threshold).count();
    Ok(hits as f64 / pos.len() as f64)
}

/// `1 / (1 + #{negatives strictly above the positive})`; ties favour the
/// positive.
pub fn reciprocal_rank(pos: f64, neg: &[f64]) -> f64 {
    1.0 / (1 + neg.iter().filter(|&&n| n > pos).count()) as f64
}

/// Mean reciprocal rank over `(positive score, its negatives)` entries.
pub fn mrr(per_source: &[(f64, Vec<f64>)]) -> Result<f64> {
    if per_source.is_empty() {
        return Err(Error::InvalidArgument("MRR needs at least one source".into()));
    }
    let mut total = 0.0;
    for (pos, neg) in per_source {
        if neg.is_empty() {
            return Err(Error::InvalidArgument("MRR entry without negatives".into()));
        }
        check_finite(std::slice::from_ref(pos), "positive")?;
        check_finite(neg, "negative")?;
        total += reciprocal_rank(*pos, neg);
    }
    Ok(total / per_source.len() as f64)
}

/// MRR when every positive is ranked against one shared pool.
pub fn mrr_shared_pool(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument("MRR needs positive and negative scores".into()));
    }
    check_finite(pos, "positive")?;
    check_finite(neg, "negative")?;
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = pos
        .iter()
        .map(|&p| {
            let above = sorted.len() - sorted.partition_point(|&n| n <= p);
            1.0 / (1 + above) as f64
        })
        .sum();
    Ok(total / pos.len() as f64)
}
