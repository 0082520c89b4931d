//! Evaluation metrics: squared distance correlation, binary classification
//! rates, and continual-transfer summaries.

use thiserror::Error;

use crate::matrix::Mat;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Pairwise Euclidean distance matrix, double-centred in place.
fn centred_distances(x: &Mat) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = s.sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let row_mean: Vec<f64> = (0..n)
        .map(|i| d[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    // Symmetric, so column means equal row means.
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] += grand - row_mean[i] - row_mean[j];
        }
    }
    d
}

fn mean_product(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Squared distance correlation (biased V-statistic) between paired samples.
/// Returns 0 when either sample is constant.
pub fn dcor2(x: &Mat, y: &Mat) -> Result<f64, MetricsError> {
    let n = x.rows();
    if n != y.rows() {
        return Err(MetricsError::Parameter(format!(
            "sample sizes differ: {n} vs {}",
            y.rows()
        )));
    }
    if n < 2 {
        return Err(MetricsError::Parameter(format!("need n >= 2, got {n}")));
    }
    if x.cols() == 0 || y.cols() == 0 {
        return Err(MetricsError::Parameter("empty feature dimension".into()));
    }
    let a = centred_distances(x);
    let b = centred_distances(y);
    let dvar_x = mean_product(&a, &a);
    let dvar_y = mean_product(&b, &b);
    if dvar_x <= 0.0 || dvar_y <= 0.0 {
        return Ok(0.0);
    }
    let dcov = mean_product(&a, &b);
    Ok((dcov / (dvar_x * dvar_y).sqrt()).clamp(0.0, 1.0))
}

/// Binary classification rates. `tpr`/`tnr` (and hence balanced accuracy)
/// are `None` when the corresponding class is absent from `labels`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub accuracy: f64,
    pub balanced_accuracy: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
}

pub fn rates(preds: &[usize], labels: &[usize]) -> Result<Rates, MetricsError> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(MetricsError::Parameter(format!(
            "need equal nonempty lengths, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = preds.iter().chain(labels).find(|&&v| v > 1) {
        return Err(MetricsError::Parameter(format!("non-binary value {bad}")));
    }
    let (mut tp, mut tn, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in preds.iter().zip(labels) {
        if l == 1 {
            pos += 1;
            tp += (p == 1) as usize;
        } else {
            neg += 1;
            tn += (p == 0) as usize;
        }
    }
    let tpr = (pos > 0).then(|| tp as f64 / pos as f64);
    let tnr = (neg > 0).then(|| tn as f64 / neg as f64);
    Ok(Rates {
        accuracy: (tp + tn) as f64 / preds.len() as f64,
        balanced_accuracy: tpr.zip(tnr).map(|(a, b)| (a + b) / 2.0),
        tpr,
        tnr,
    })
}

/// `r[(i, j)]`: accuracy on stage `j` after training through stage `i`;
/// `a[i]`: theoretical maximum accuracy of stage `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRecord {
    pub r: Mat,
    pub a: Vec<f64>,
}

impl TransferRecord {
    pub fn new(r: Mat, a: Vec<f64>) -> Result<Self, MetricsError> {
        let rec = TransferRecord { r, a };
        rec.validate()?;
        Ok(rec)
    }

    pub fn stages(&self) -> usize {
        self.a.len()
    }

    fn validate(&self) -> Result<usize, MetricsError> {
        let s = self.a.len();
        if self.r.rows() != s || self.r.cols() != s {
            return Err(MetricsError::Parameter(format!(
                "R is {}x{} but {s} maxima were given",
                self.r.rows(),
                self.r.cols()
            )));
        }
        if s < 2 {
            return Err(MetricsError::Parameter(format!("need >= 2 stages, got {s}")));
        }
        if self
            .r
            .data()
            .iter()
            .chain(&self.a)
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(MetricsError::Parameter("accuracies must lie in [0, 1]".into()));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferDistance {
    pub accd: f64,
    pub bwtd: f64,
    pub fwtd: f64,
}

/// Distances of final, backward and forward accuracies from the
/// theoretical maxima. `bwtd` is signed: negative means later stages
/// moved earlier accuracies closer to their maxima.
pub fn transfer_distance(rec: &TransferRecord) -> Result<TransferDistance, MetricsError> {
    let s = rec.validate()?;
    let r = &rec.r;
    let a = &rec.a;
    let last = s - 1;
    let accd = (0..s).map(|i| (r[(last, i)] - a[i]).abs()).sum::<f64>() / s as f64;
    let bwtd = (0..last)
        .map(|i| (r[(last, i)] - a[i]).abs() - (r[(i, i)] - a[i]).abs())
        .sum::<f64>()
        / last as f64;
    let fwtd = (1..s).map(|i| (r[(i - 1, i)] - a[i]).abs()).sum::<f64>() / last as f64;
    Ok(TransferDistance { accd, bwtd, fwtd })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferGem {
    pub acc: f64,
    pub bwt: f64,
    pub fwt: f64,
}

/// Classical average accuracy, backward and forward transfer. `baseline[i]`
/// is the accuracy of the untrained model on stage `i`.
pub fn transfer_gem(rec: &TransferRecord, baseline: &[f64]) -> Result<TransferGem, MetricsError> {
    let s = rec.validate()?;
    if baseline.len() != s {
        return Err(MetricsError::Parameter(format!(
            "{} baselines for {s} stages",
            baseline.len()
        )));
    }
    let r = &rec.r;
    let last = s - 1;
    let acc = (0..s).map(|i| r[(last, i)]).sum::<f64>() / s as f64;
    let bwt = (0..last).map(|i| r[(last, i)] - r[(i, i)]).sum::<f64>() / last as f64;
    let fwt = (1..s).map(|i| r[(i - 1, i)] - baseline[i]).sum::<f64>() / last as f64;
    Ok(TransferGem { acc, bwt, fwt })
}
