//! Distance correlation against planted factors, accuracy, and per-group
//! accuracy.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{predict, GaussianEncoder, LinearHead};
use crate::synth::SynthDataset;
use crate::tensor::Tensor;

/// Double-centred Euclidean distance matrix of the rows of `a`.
fn centred_distances(a: &Tensor) -> Vec<f64> {
    let n = a.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = a
                .row(i)
                .iter()
                .zip(a.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let row_mean: Vec<f64> = (0..n).map(|i| d[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            // symmetric, so column means equal row means
            d[i * n + j] += grand - row_mean[i] - row_mean[j];
        }
    }
    d
}

/// Biased sample distance correlation between the rows of `a: [n,p]` and
/// `b: [n,q]`. Constant input gives 0.
pub fn distance_correlation(a: &Tensor, b: &Tensor) -> Result<f64> {
    let n = a.rows();
    if n != b.rows() {
        return Err(Error::dim("distance_correlation", "row counts differ"));
    }
    if n < 2 {
        return Err(Error::Domain("distance correlation needs at least two rows".into()));
    }
    let da = centred_distances(a);
    let db = centred_distances(b);
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (n * n) as f64;
    let dcov2 = dot(&da, &db);
    let (va, vb) = (dot(&da, &da), dot(&db, &db));
    if va <= 0.0 || vb <= 0.0 {
        return Ok(0.0);
    }
    let r2 = (dcov2 / (va * vb).sqrt()).clamp(0.0, 1.0);
    Ok(r2.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcorReport {
    pub dcor_sn: f64,
    pub dcor_sf: f64,
    pub dcor_nc: f64,
    pub dcor_sp: f64,
    pub n_eval: usize,
    pub delta: f64,
    pub s: f64,
}

fn column(t: &Tensor, j: usize) -> Tensor {
    let data = (0..t.rows()).map(|i| t.at(i, j)).collect();
    Tensor::from_parts(vec![t.rows(), 1], data)
}

/// Distance correlation of the encoder mean against each factor column, and
/// the accuracy of the mean-based prediction.
pub fn evaluate(
    data: &SynthDataset,
    enc_c: &GaussianEncoder,
    w: &LinearHead,
    delta: f64,
    s: f64,
) -> Result<(DcorReport, f64)> {
    let x = data.inputs()?;
    let (rep, _) = enc_c.encode(&x)?;
    let factors = data.factor_table()?;
    let dc = |j| distance_correlation(&rep, &column(&factors, j));
    let report = DcorReport {
        dcor_sn: dc(0)?,
        dcor_sf: dc(1)?,
        dcor_nc: dc(2)?,
        dcor_sp: dc(3)?,
        n_eval: data.len(),
        delta,
        s,
    };
    let pred = predict(w, enc_c, &x)?;
    let correct = pred.iter().zip(data.labels()).filter(|(p, y)| **p == *y).count();
    Ok((report, correct as f64 / data.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupAccuracy {
    pub per_group: BTreeMap<usize, f64>,
    pub average: f64,
    pub min: f64,
}

/// Accuracy within each group. `expected_groups` lists groups that must be
/// present; a listed group with no samples is an error.
pub fn group_accuracy(
    x: &Tensor,
    y: &[u8],
    groups: &[usize],
    expected_groups: &[usize],
    enc_c: &GaussianEncoder,
    w: &LinearHead,
) -> Result<GroupAccuracy> {
    if y.len() != x.rows() || groups.len() != x.rows() {
        return Err(Error::dim("group_accuracy", "inputs, labels and groups must align"));
    }
    let pred = predict(w, enc_c, x)?;
    let mut tally: BTreeMap<usize, (usize, usize)> = expected_groups.iter().map(|&g| (g, (0, 0))).collect();
    for ((p, t), g) in pred.iter().zip(y).zip(groups) {
        let e = tally.entry(*g).or_insert((0, 0));
        e.0 += usize::from(p == t);
        e.1 += 1;
    }
    if tally.is_empty() {
        return Err(Error::Contract("no groups".into()));
    }
    let mut per_group = BTreeMap::new();
    for (g, (hit, total)) in tally {
        if total == 0 {
            return Err(Error::MissingGroup(g));
        }
        per_group.insert(g, hit as f64 / total as f64);
    }
    let average = per_group.values().sum::<f64>() / per_group.len() as f64;
    let min = per_group.values().copied().fold(f64::INFINITY, f64::min);
    Ok(GroupAccuracy { per_group, average, min })
}
