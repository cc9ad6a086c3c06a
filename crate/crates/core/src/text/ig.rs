use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Shannon entropy in bits of a count vector. Zero counts contribute nothing.
pub fn entropy_bits(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Information gain of a binary feature over a labeled set:
/// `H(C) - P(f) H(C | f) - P(!f) H(C | !f)`, in bits.
pub fn information_gain<L: Ord>(samples: &[(bool, L)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    let mut table: BTreeMap<&L, (u64, u64)> = BTreeMap::new();
    for (present, label) in samples {
        let cell = table.entry(label).or_default();
        cell.0 += 1;
        if *present {
            cell.1 += 1;
        }
    }
    let (totals, present): (Vec<u64>, Vec<u64>) = table.values().copied().unzip();
    Ok(gain_from_counts(&totals, &present))
}

/// Gain from per-class totals and per-class present counts.
pub(crate) fn gain_from_counts(class_totals: &[u64], present: &[u64]) -> f64 {
    let n: u64 = class_totals.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let absent: Vec<u64> = class_totals
        .iter()
        .zip(present)
        .map(|(t, p)| t - p)
        .collect();
    let n_present: u64 = present.iter().sum();
    let n_absent = n - n_present;
    let h_c = entropy_bits(class_totals);
    let nf = n as f64;
    let conditional = (n_present as f64 / nf) * entropy_bits(present)
        + (n_absent as f64 / nf) * entropy_bits(&absent);
    (h_c - conditional).clamp(0.0, h_c)
}
