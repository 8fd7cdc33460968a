//! Serializable summaries of smoothing runs and method comparisons.

use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::mesh::Mesh;
use crate::quality::{quality_report, QualityKind, QualityReport};
use crate::smooth::{smooth, Method, SmoothConfig};

/// One smoothing (or plain evaluation) run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub method: String,
    pub measure: String,
    pub average: f64,
    pub min: f64,
    pub max: f64,
    pub invalid_count: usize,
    pub iterations: usize,
    pub converged: bool,
    pub wall_ms: f64,
    /// Per-element values of `measure`.
    pub values: Vec<f64>,
}

impl RunReport {
    pub fn new(method: impl Into<String>, q: QualityReport, iterations: usize, converged: bool, wall_ms: f64) -> Self {
        RunReport {
            method: method.into(),
            measure: q.measure,
            average: q.average,
            min: q.min,
            max: q.max,
            invalid_count: q.invalid_count,
            iterations,
            converged,
            wall_ms,
            values: q.values,
        }
    }

    /// Report of an unsmoothed mesh.
    pub fn initial(q: QualityReport) -> Self {
        RunReport::new("initial", q, 0, true, 0.0)
    }
}

/// One row of a method comparison: the shape of a "smoothing method /
/// average / maximum" table.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    /// Table label (`Laplacian`, `λ1`, …, `√mr`).
    pub label: String,
    #[serde(flatten)]
    pub run: RunReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub measure: String,
    pub initial: RunReport,
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn row(&self, label: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Smooths `m` with `cfg` and reports `measure` on the result.
pub fn run(m: &mut Mesh, cfg: &SmoothConfig, measure: QualityKind) -> Result<RunReport> {
    let t = Instant::now();
    let res = smooth(m, cfg)?;
    let wall_ms = t.elapsed().as_secs_f64() * 1e3;
    Ok(RunReport::new(cfg.method.name(), quality_report(m, measure)?, res.iters, res.converged, wall_ms))
}

/// Runs every method on its own copy of `m`, in parallel. `base` supplies
/// all settings except the method.
pub fn compare(m: &Mesh, methods: &[Method], measure: QualityKind, base: &SmoothConfig) -> Result<CompareReport> {
    let initial = RunReport::initial(quality_report(m, measure)?);
    let runs: Vec<Result<RunReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = methods
            .iter()
            .map(|method| {
                let cfg = SmoothConfig {
                    method: method.clone(),
                    ..base.clone()
                };
                s.spawn(move || run(&mut m.clone(), &cfg, measure))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("smoothing thread panicked")).collect()
    });
    let mut rows = Vec::with_capacity(methods.len());
    for (method, r) in methods.iter().zip(runs) {
        rows.push(CompareRow {
            label: method.label().to_string(),
            run: r?,
        });
    }
    Ok(CompareReport {
        measure: measure.name().to_string(),
        initial,
        rows,
    })
}

/// The comparison rows of a tetrahedral method table: Laplacian, `λ1…λ5`,
/// mean ratio and its square root.
pub fn table_methods() -> Vec<Method> {
    let mut out = vec![Method::Laplace];
    out.extend((1..=5).map(|i| Method::GradAscent(QualityKind::from_lambda_index(i).unwrap().into())));
    out.push(Method::GradAscent(QualityKind::MeanRatio.into()));
    out.push(Method::GradAscent(QualityKind::SqrtMeanRatio.into()));
    out
}
