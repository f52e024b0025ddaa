//! CSV renderings of evaluation results. Every table has one header row.

use std::fmt::Write;

use super::{ClusterResult, Histogram, InvarianceReport, PoseProbeReport, SweepRow};
use crate::models::LatentCode;

/// `class,cluster_0,…` with one row per class.
pub fn confusion_csv(result: &ClusterResult) -> String {
    let n_clusters = result.confusion.first().map_or(0, |r| r.len());
    let mut out = String::from("class");
    for c in 0..n_clusters {
        let _ = write!(out, ",cluster_{c}");
    }
    out.push('\n');
    for (class, row) in result.confusion.iter().enumerate() {
        let _ = write!(out, "{class}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// `bin_lo,bin_hi,count`.
pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.edges(i);
        let _ = writeln!(out, "{lo:.6},{hi:.6},{c}");
    }
    out
}

/// `index,theta,delta_aligned,residual` per rotation probe.
pub fn probes_csv(report: &PoseProbeReport) -> String {
    let mut out = String::from("index,theta,delta_aligned,residual\n");
    for &(i, t, d) in &report.probes {
        let _ = writeln!(out, "{i},{t:.9},{d:.9},{:.9}", d - t);
    }
    out
}

/// `metric,value` pairs.
pub fn summary_csv(rows: &[(String, f64)]) -> String {
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

/// `index,median_cos,min_cos,canonical_mse` per image.
pub fn invariance_csv(report: &InvarianceReport) -> String {
    let mut out = String::from("index,median_cos,min_cos,canonical_mse\n");
    for (i, s) in report.per_image.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", s.median_cos, s.min_cos, s.canonical_mse);
    }
    out
}

/// `latent_dim,accuracy,std`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("latent_dim,accuracy,std\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.latent_dim, r.accuracy, r.std);
    }
    out
}

/// `index,label,z_0,…,z_{d-1},theta_hat,tau_x,tau_y`.
pub fn embeddings_csv(indices: &[usize], labels: &[u32], codes: &[LatentCode]) -> String {
    let d = codes.first().map_or(0, |c| c.z.len());
    let mut out = String::from("index,label");
    for j in 0..d {
        let _ = write!(out, ",z_{j}");
    }
    out.push_str(",theta_hat,tau_x,tau_y\n");
    for ((i, l), c) in indices.iter().zip(labels).zip(codes) {
        let _ = write!(out, "{i},{l}");
        for v in &c.z {
            let _ = write!(out, ",{v:e}");
        }
        let _ = writeln!(out, ",{:e},{:e},{:e}", c.theta_hat, c.tau_hat[0], c.tau_hat[1]);
    }
    out
}
