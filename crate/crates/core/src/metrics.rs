//! Clustering evaluation: overall accuracy under optimal label matching,
//! normalized mutual information, and Cohen's kappa. Metrics only see pixels
//! with a nonzero ground-truth label.

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::Serialize;

/// Aligned evaluation of a predicted labeling against ground truth. The
/// confusion matrix is reported after the optimal matching, so its trace is
/// the agreement count.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub oa: f64,
    pub nmi: f64,
    pub kappa: f64,
    /// k×k counts over labeled pixels, rows = matched prediction, cols = truth.
    pub confusion: Vec<Vec<u64>>,
}

/// Confusion counts over labeled pixels: rows = predicted class − 1,
/// columns = true class − 1, square over the larger label range.
pub fn confusion_matrix(pred: &[u16], gt: &[u16]) -> Result<Array2<u64>> {
    if pred.len() != gt.len() {
        return Err(Error::validation(format!(
            "label length mismatch: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let kp = pred.iter().copied().max().unwrap_or(0) as usize;
    let kg = gt.iter().copied().max().unwrap_or(0) as usize;
    let k = kp.max(kg);
    if k == 0 {
        return Err(Error::validation("no labeled pixels"));
    }
    let mut conf = Array2::<u64>::zeros((k, k));
    let mut labeled = 0u64;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        if g == 0 {
            continue;
        }
        labeled += 1;
        if p == 0 {
            continue; // unpredicted pixel counts against accuracy implicitly
        }
        conf[[(p - 1) as usize, (g - 1) as usize]] += 1;
    }
    if labeled == 0 {
        return Err(Error::validation("ground truth has no labeled pixels"));
    }
    Ok(conf)
}

/// Hungarian algorithm on a square cost matrix; returns the column assigned
/// to each row of a minimum-cost perfect matching.
pub fn hungarian_min_cost(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    // Potentials method, 1-indexed internals.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Optimal one-to-one matching of predicted classes onto true classes,
/// maximizing agreement on the confusion matrix; agreement ties resolve to
/// the matching with the smallest chance-agreement term Σ row·col, which
/// pins down (p_o, p_e) and thereby kappa regardless of how the predicted
/// classes happen to be numbered. Returns for each predicted class (0-based)
/// its matched true class (0-based).
pub fn best_label_matching(conf: &Array2<u64>) -> Vec<usize> {
    let k = conf.nrows();
    let max_v = conf.iter().copied().max().unwrap_or(0) as f64;
    let total: u64 = conf.iter().sum();
    let row_sum: Vec<f64> = (0..k).map(|r| conf.row(r).iter().sum::<u64>() as f64).collect();
    let col_sum: Vec<f64> = (0..k)
        .map(|c| conf.column(c).iter().sum::<u64>() as f64)
        .collect();
    // Secondary term scaled below one agreement unit so it only breaks ties.
    let scale = 1.0 / (total as f64 * total as f64 + 1.0);
    let cost = Array2::from_shape_fn((k, k), |(r, c)| {
        (max_v - conf[[r, c]] as f64) + row_sum[r] * col_sum[c] * scale
    });
    hungarian_min_cost(&cost)
}

/// Overall accuracy under the optimal matching.
pub fn overall_accuracy(pred: &[u16], gt: &[u16]) -> Result<f64> {
    let conf = confusion_matrix(pred, gt)?;
    let matching = best_label_matching(&conf);
    let agree: u64 = matching
        .iter()
        .enumerate()
        .map(|(r, &c)| conf[[r, c]])
        .sum();
    let total: u64 = gt.iter().filter(|&&g| g != 0).count() as u64;
    Ok(agree as f64 / total as f64)
}

/// Normalized mutual information: MI over the arithmetic mean of the two
/// marginal entropies; 0 when either partition is degenerate.
pub fn nmi(pred: &[u16], gt: &[u16]) -> Result<f64> {
    let conf = confusion_matrix(pred, gt)?;
    let k = conf.nrows();
    let total: u64 = conf.iter().sum();
    if total == 0 {
        return Ok(0.0);
    }
    let n = total as f64;
    let row_sum: Vec<f64> = (0..k).map(|r| conf.row(r).iter().sum::<u64>() as f64).collect();
    let col_sum: Vec<f64> = (0..k)
        .map(|c| conf.column(c).iter().sum::<u64>() as f64)
        .collect();
    let mut mi = 0.0;
    for r in 0..k {
        for c in 0..k {
            let joint = conf[[r, c]] as f64;
            if joint > 0.0 {
                mi += joint / n * ((joint * n) / (row_sum[r] * col_sum[c])).ln();
            }
        }
    }
    let entropy = |sums: &[f64]| -> f64 {
        sums.iter()
            .filter(|&&s| s > 0.0)
            .map(|&s| {
                let p = s / n;
                -p * p.ln()
            })
            .sum()
    };
    let hu = entropy(&row_sum);
    let hv = entropy(&col_sum);
    let denom = (hu + hv) / 2.0;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Cohen's kappa from a confusion matrix whose rows are already aligned to
/// its columns: κ = (p_o − p_e)/(1 − p_e), with κ = 0 at p_e = 1.
pub fn kappa_from_confusion(conf: &Array2<u64>) -> f64 {
    let k = conf.nrows();
    let total: u64 = conf.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let po: f64 = (0..k).map(|i| conf[[i, i]] as f64).sum::<f64>() / n;
    let pe: f64 = (0..k)
        .map(|i| {
            let row: f64 = conf.row(i).iter().sum::<u64>() as f64;
            let col: f64 = conf.column(i).iter().sum::<u64>() as f64;
            (row / n) * (col / n)
        })
        .sum();
    if (1.0 - pe).abs() < 1e-15 {
        return 0.0;
    }
    (po - pe) / (1.0 - pe)
}

/// Full aligned evaluation: Hungarian matching, OA, NMI, and kappa computed
/// on the matched confusion matrix.
pub fn evaluate(pred: &[u16], gt: &[u16]) -> Result<MetricReport> {
    let conf = confusion_matrix(pred, gt)?;
    let matching = best_label_matching(&conf);
    let k = conf.nrows();
    let mut matched = Array2::<u64>::zeros((k, k));
    for r in 0..k {
        for c in 0..k {
            matched[[matching[r], c]] = conf[[r, c]];
        }
    }
    let total: u64 = matched.iter().sum();
    let agree: u64 = (0..k).map(|i| matched[[i, i]]).sum();
    let labeled: u64 = gt.iter().filter(|&&g| g != 0).count() as u64;
    let oa = agree as f64 / labeled as f64;
    let _ = total;
    let nmi_v = nmi(pred, gt)?;
    let kappa_v = kappa_from_confusion(&matched);
    Ok(MetricReport {
        oa,
        nmi: nmi_v,
        kappa: kappa_v,
        confusion: (0..k)
            .map(|r| (0..k).map(|c| matched[[r, c]]).collect())
            .collect(),
    })
}
