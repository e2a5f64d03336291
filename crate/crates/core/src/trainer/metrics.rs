use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::preprocess::TargetSpec;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidLength(format!("{} estimates vs {} targets", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidLength("need at least two points".into()));
    }
    Ok(())
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateInput("correlation of a constant vector".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok((a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt())
}

/// RMSE as a percentage of the target's full-scale width.
pub fn normalized_rmse(rmse: f64, spec: &TargetSpec) -> f64 {
    100.0 * rmse / spec.full_scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub rho: f64,
    pub rmse: f64,
    pub nrmse_pct: f64,
    pub points: usize,
}

fn agreement(est: &[f64], tgt: &[f64], spec: &TargetSpec) -> Result<Agreement> {
    let r = rmse(est, tgt)?;
    Ok(Agreement {
        rho: pearson(est, tgt)?,
        rmse: r,
        nrmse_pct: normalized_rmse(r, spec),
        points: est.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMetrics {
    pub target: &'static str,
    pub segment: Agreement,
    /// Present when condition labels were given and at least two distinct
    /// conditions occur.
    pub condition: Option<Agreement>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub targets: Vec<TargetMetrics>,
}

/// Per-target agreement between `estimates` and `targets` (one row per
/// segment, one column per target, native units). With `conditions`, a
/// second comparison runs on per-condition means.
pub fn metrics(
    estimates: &[Vec<f64>],
    targets: &[Vec<f64>],
    specs: &[TargetSpec],
    conditions: Option<&[String]>,
) -> Result<MetricReport> {
    if estimates.len() != targets.len() {
        return Err(Error::InvalidLength(format!(
            "{} estimate rows vs {} target rows",
            estimates.len(),
            targets.len()
        )));
    }
    if estimates.iter().chain(targets).any(|r| r.len() != specs.len()) {
        return Err(Error::InvalidShape(format!("every row needs {} values", specs.len())));
    }
    if let Some(c) = conditions {
        if c.len() != estimates.len() {
            return Err(Error::InvalidLength("one condition label per row required".into()));
        }
    }
    let groups: Option<BTreeMap<&str, Vec<usize>>> = conditions.map(|c| {
        let mut g: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, id) in c.iter().enumerate() {
            g.entry(id.as_str()).or_default().push(i);
        }
        g
    });
    let column = |rows: &[Vec<f64>], t: usize| rows.iter().map(|r| r[t]).collect::<Vec<f64>>();
    let mean_of = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;

    let mut out = Vec::with_capacity(specs.len());
    for (t, spec) in specs.iter().enumerate() {
        let est = column(estimates, t);
        let tgt = column(targets, t);
        let segment = agreement(&est, &tgt, spec)?;
        let condition = match &groups {
            Some(g) if g.len() >= 2 => {
                let ce: Vec<f64> = g.values().map(|idx| mean_of(&est, idx)).collect();
                let ct: Vec<f64> = g.values().map(|idx| mean_of(&tgt, idx)).collect();
                Some(agreement(&ce, &ct, spec)?)
            }
            _ => None,
        };
        out.push(TargetMetrics {
            target: spec.name,
            segment,
            condition,
        });
    }
    Ok(MetricReport { targets: out })
}
