//! Image-quality metrics and method comparison tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

/// Peak signal value for images in `[0, 1]`.
pub const MAX_I: f64 = 1.0;
pub const C1: f64 = (0.01 * MAX_I) * (0.01 * MAX_I);
pub const C2: f64 = (0.03 * MAX_I) * (0.03 * MAX_I);

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("empty image")]
    Empty,
    #[error("method {method} has {got} outputs for {expected} targets")]
    Length {
        method: String,
        got: usize,
        expected: usize,
    },
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn check(u: &Array2<f64>, v: &Array2<f64>) -> Result<f64, MetricsError> {
    if u.dim() != v.dim() {
        return Err(MetricsError::Shape(u.dim(), v.dim()));
    }
    if u.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(u.len() as f64)
}

/// Whole-image SSIM: one mean, variance and covariance over all pixels
/// (population normalization).
pub fn ssim(u: &Array2<f64>, v: &Array2<f64>) -> Result<f64, MetricsError> {
    let n = check(u, v)?;
    let mu_u = u.sum() / n;
    let mu_v = v.sum() / n;
    let (mut var_u, mut var_v, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v.iter()) {
        let (da, db) = (a - mu_u, b - mu_v);
        var_u += da * da;
        var_v += db * db;
        cov += da * db;
    }
    var_u /= n;
    var_v /= n;
    cov /= n;
    Ok(((2.0 * mu_u * mu_v + C1) * (2.0 * cov + C2))
        / ((mu_u * mu_u + mu_v * mu_v + C1) * (var_u + var_v + C2)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    /// Identical images.
    Infinite,
}

impl Psnr {
    pub fn value(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Psnr::Infinite
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

pub fn mse(u: &Array2<f64>, v: &Array2<f64>) -> Result<f64, MetricsError> {
    let n = check(u, v)?;
    Ok(u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// `10 log10(MAX_I^2 / MSE)`.
pub fn psnr(u: &Array2<f64>, v: &Array2<f64>) -> Result<Psnr, MetricsError> {
    let m = mse(u, v)?;
    Ok(if m == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (MAX_I * MAX_I / m).log10())
    })
}

/// Per-sample SSIM and PSNR for each method against common targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub methods: Vec<String>,
    /// `ssim[method][sample]`
    pub ssim: Vec<Vec<f64>>,
    /// `psnr[method][sample]`
    pub psnr: Vec<Vec<Psnr>>,
    pub mean_ssim: Vec<f64>,
    /// Mean over samples; infinite if any sample is.
    pub mean_psnr: Vec<Psnr>,
}

pub fn compare_methods(
    targets: &[Array2<f64>],
    outputs: &[(String, Vec<Array2<f64>>)],
) -> Result<MetricReport, MetricsError> {
    let mut report = MetricReport {
        methods: Vec::new(),
        ssim: Vec::new(),
        psnr: Vec::new(),
        mean_ssim: Vec::new(),
        mean_psnr: Vec::new(),
    };
    for (name, outs) in outputs {
        if outs.len() != targets.len() {
            return Err(MetricsError::Length {
                method: name.clone(),
                got: outs.len(),
                expected: targets.len(),
            });
        }
        let s = targets
            .iter()
            .zip(outs)
            .map(|(t, o)| ssim(o, t))
            .collect::<Result<Vec<_>, _>>()?;
        let p = targets
            .iter()
            .zip(outs)
            .map(|(t, o)| psnr(o, t))
            .collect::<Result<Vec<_>, _>>()?;
        let count = targets.len().max(1) as f64;
        report.mean_ssim.push(s.iter().sum::<f64>() / count);
        report.mean_psnr.push(if p.iter().any(|v| v.is_infinite()) {
            Psnr::Infinite
        } else {
            Psnr::Finite(p.iter().map(|v| v.value()).sum::<f64>() / count)
        });
        report.methods.push(name.clone());
        report.ssim.push(s);
        report.psnr.push(p);
    }
    Ok(report)
}

impl MetricReport {
    pub fn sample_count(&self) -> usize {
        self.ssim.first().map_or(0, Vec::len)
    }

    /// Aligned text table: one row per sample, SSIM then PSNR per method,
    /// followed by a mean row.
    pub fn to_text_table(&self) -> String {
        let mut header = vec!["sample".to_string()];
        for m in &self.methods {
            header.push(format!("{m} SSIM"));
            header.push(format!("{m} PSNR"));
        }
        let mut rows = vec![header];
        for i in 0..self.sample_count() {
            let mut row = vec![i.to_string()];
            for k in 0..self.methods.len() {
                row.push(format!("{:.4}", self.ssim[k][i]));
                row.push(self.psnr[k][i].to_string());
            }
            rows.push(row);
        }
        let mut mean = vec!["mean".to_string()];
        for k in 0..self.methods.len() {
            mean.push(format!("{:.4}", self.mean_ssim[k]));
            mean.push(self.mean_psnr[k].to_string());
        }
        rows.push(mean);
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (ri, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  "));
            if ri == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        out
    }

    /// Long-format CSV: `sample,method,ssim,psnr` with `inf` for identical
    /// images and `mean` rows last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,method,ssim,psnr\n");
        for i in 0..self.sample_count() {
            for (k, m) in self.methods.iter().enumerate() {
                let _ = writeln!(out, "{i},{m},{:.12},{}", self.ssim[k][i], csv_psnr(self.psnr[k][i]));
            }
        }
        for (k, m) in self.methods.iter().enumerate() {
            let _ = writeln!(out, "mean,{m},{:.12},{}", self.mean_ssim[k], csv_psnr(self.mean_psnr[k]));
        }
        out
    }

    pub fn write(&self, text_path: &Path, csv_path: &Path) -> Result<(), MetricsError> {
        for (path, body) in [(text_path, self.to_text_table()), (csv_path, self.to_csv())] {
            fs::write(path, body).map_err(|source| MetricsError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }
}

fn csv_psnr(p: Psnr) -> String {
    match p {
        Psnr::Finite(v) => format!("{v:.12}"),
        Psnr::Infinite => "inf".into(),
    }
}
