//! Empirical counterparts of the convergence bound's terms.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Sequential;

pub const CSV_HEADER: &str = "t,eta,grad_norm_sq,eps_mean,delta_mean,loss,gamma,lhs_running,rhs_running";

/// Observations for one round, taken at the round-start global model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub round: u32,
    pub eta: f64,
    /// `||grad F_S(w_S^t)||^2` over the probe set.
    pub grad_norm_sq: f64,
    /// Per-device quantization gradient error.
    pub eps: Vec<f64>,
    /// Per-device buffer distance proxy.
    pub delta: Vec<f64>,
    /// Per-device `|F_S(a_hat) - F_S(a)|`, logged alongside `eps`.
    pub loss_gap: Vec<f64>,
    pub loss: f64,
    /// `sum_{s <= t} eta_s`.
    pub gamma: f64,
    /// Largest per-sample squared gradient norm seen this round.
    pub max_sample_grad_sq: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl DiagnosticsRecord {
    pub fn eps_mean(&self) -> f64 {
        mean(&self.eps)
    }

    pub fn delta_mean(&self) -> f64 {
        mean(&self.delta)
    }
}

/// Mean loss and server-parameter gradient of `device` then `server` on a batch.
pub fn server_loss_and_grad(
    device: &Sequential<f32>,
    server: &Sequential<f32>,
    data: &Dataset,
    indices: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let (x, y) = data.batch(indices)?;
    let a = device.infer(&x)?;
    crate::quant::server_gradient(server, &a, &y)
}

/// Loss and squared server-gradient norm of the mean loss over `indices`,
/// processed in chunks of `chunk` samples.
pub fn probe_gradient(
    device: &Sequential<f32>,
    server: &Sequential<f32>,
    data: &Dataset,
    indices: &[usize],
    chunk: usize,
) -> Result<(f64, f64)> {
    let (loss, grad) = full_gradient(device, server, data, indices, chunk)?;
    Ok((loss, grad.iter().map(|g| g * g).sum()))
}

pub fn full_gradient(
    device: &Sequential<f32>,
    server: &Sequential<f32>,
    data: &Dataset,
    indices: &[usize],
    chunk: usize,
) -> Result<(f64, Vec<f64>)> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset("diagnostics probe".into()));
    }
    let n = indices.len() as f64;
    let mut loss = 0.0;
    let mut acc: Vec<f64> = Vec::new();
    for c in indices.chunks(chunk.max(1)) {
        let w = c.len() as f64 / n;
        let (l, g) = server_loss_and_grad(device, server, data, c)?;
        loss += w * l;
        if acc.is_empty() {
            acc = vec![0.0; g.len()];
        }
        acc.iter_mut().zip(&g).for_each(|(a, g)| *a += w * g);
    }
    Ok((loss, acc))
}

/// Largest squared server-gradient norm of any single sample in `indices`.
pub fn max_sample_grad_sq(
    device: &Sequential<f32>,
    server: &Sequential<f32>,
    data: &Dataset,
    indices: &[usize],
) -> Result<f64> {
    let mut best = 0.0f64;
    for &i in indices {
        let (_, g) = server_loss_and_grad(device, server, data, &[i])?;
        best = best.max(g.iter().map(|v| v * v).sum());
    }
    Ok(best)
}

/// Observed maximum of the per-sample squared gradient norm.
pub fn estimate_g(records: &[DiagnosticsRecord]) -> f64 {
    records.iter().map(|r| r.max_sample_grad_sq).fold(0.0, f64::max)
}

/// Running maxima of [`estimate_g`], one per record.
pub fn estimate_g_running(records: &[DiagnosticsRecord]) -> Vec<f64> {
    records
        .iter()
        .scan(0.0f64, |m, r| {
            *m = m.max(r.max_sample_grad_sq);
            Some(*m)
        })
        .collect()
}

/// `max ||grad(w) - grad(v)|| / ||w - v||` over pairs where `v` is a Gaussian
/// perturbation of scale `sigma` around each anchor `w`.
pub fn estimate_l<F>(grad: F, anchors: &[Vec<f64>], pairs_per_anchor: usize, sigma: f64, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("perturbation scale {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for w in anchors {
        let gw = grad(w)?;
        for _ in 0..pairs_per_anchor {
            let v: Vec<f64> = w
                .iter()
                .map(|x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x + sigma * z
                })
                .collect();
            let dist = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist == 0.0 {
                continue;
            }
            let gv = grad(&v)?;
            let num = gw.iter().zip(&gv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            best = best.max(num / dist);
        }
    }
    Ok(best)
}

/// Estimates written next to the diagnostics CSV and read back by `diagnose`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub g_hat: f64,
    pub l_hat: f64,
    pub f_star: f64,
    pub devices: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundRow {
    pub t: u32,
    pub eta: f64,
    pub grad_norm_sq: f64,
    pub eps_mean: f64,
    pub delta_mean: f64,
    pub loss: f64,
    pub gamma: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub estimates: Estimates,
    pub initial_loss: f64,
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    /// Row covering the first `t` rounds.
    pub fn at(&self, t: usize) -> Option<&BoundRow> {
        t.checked_sub(1).and_then(|i| self.rows.get(i))
    }

    /// Whether `LHS <= RHS` after `t` rounds; `None` when undefined.
    pub fn holds_at(&self, t: usize) -> Option<bool> {
        self.at(t).filter(|r| r.lhs.is_finite() && r.rhs.is_finite()).map(|r| r.lhs <= r.rhs)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.t, r.eta, r.grad_norm_sq, r.eps_mean, r.delta_mean, r.loss, r.gamma, r.lhs, r.rhs
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let e = &self.estimates;
        let _ = writeln!(s, "G_hat = {:.6e}  L_hat = {:.6e}  F* = {:.6}  F0 = {:.6}", e.g_hat, e.l_hat, e.f_star, self.initial_loss);
        let _ = writeln!(s, "{:>6} {:>14} {:>14} {:>10}  holds", "T", "LHS", "RHS", "RHS/LHS");
        for r in &self.rows {
            let ratio = if r.lhs > 0.0 { r.rhs / r.lhs } else { f64::INFINITY };
            let holds = if r.lhs <= r.rhs { "yes" } else { "NO" };
            let _ = writeln!(s, "{:>6} {:>14.6e} {:>14.6e} {:>10.3}  {holds}", r.t + 1, r.lhs, r.rhs, ratio);
        }
        s
    }
}

/// Running LHS and RHS of the bound after each record.
///
/// `LHS_T = (1/G_T) sum eta_t ||grad||^2` and
/// `RHS_T = 4 (F_0 - F*) / (3 G_T) + G_hat (1/G_T) sum eta_t (mean_k(delta + eps) + L_hat eta_t / 2)`
/// where `G_T = sum eta_t`.
pub fn bound_report(records: &[DiagnosticsRecord], estimates: Estimates) -> Result<BoundReport> {
    if records.len() < 2 {
        return Err(Error::Config(format!("bound report needs at least 2 rounds, got {}", records.len())));
    }
    let f0 = records[0].loss;
    let (mut gamma, mut lhs_sum, mut rhs_sum) = (0.0, 0.0, 0.0);
    let rows = records
        .iter()
        .map(|r| {
            let perturb = r.delta_mean() + r.eps_mean();
            gamma += r.eta;
            lhs_sum += r.eta * r.grad_norm_sq;
            rhs_sum += r.eta * (perturb + estimates.l_hat * r.eta / 2.0);
            let lhs = lhs_sum / gamma;
            let rhs = 4.0 * (f0 - estimates.f_star) / (3.0 * gamma) + estimates.g_hat * rhs_sum / gamma;
            BoundRow {
                t: r.round,
                eta: r.eta,
                grad_norm_sq: r.grad_norm_sq,
                eps_mean: r.eps_mean(),
                delta_mean: r.delta_mean(),
                loss: r.loss,
                gamma,
                lhs,
                rhs,
            }
        })
        .collect();
    Ok(BoundReport { estimates, initial_loss: f0, rows })
}

/// Reads the per-round columns of a diagnostics CSV back into records
/// (one aggregate device per record).
pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<DiagnosticsRecord>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != CSV_HEADER {
        return Err(Error::Record(format!("diagnostics header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Record(format!("line {}: {} fields", i + 2, f.len())));
        }
        let num = |j: usize| {
            f[j].trim().parse::<f64>().map_err(|_| Error::Record(format!("line {}: bad number {:?}", i + 2, f[j])))
        };
        out.push(DiagnosticsRecord {
            round: f[0].trim().parse().map_err(|_| Error::Record(format!("line {}: bad round", i + 2)))?,
            eta: num(1)?,
            grad_norm_sq: num(2)?,
            eps: vec![num(3)?],
            delta: vec![num(4)?],
            loss_gap: Vec::new(),
            loss: num(5)?,
            gamma: num(6)?,
            max_sample_grad_sq: 0.0,
        });
    }
    Ok(out)
}
