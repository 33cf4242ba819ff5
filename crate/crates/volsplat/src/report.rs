//! JSON and CSV forms of fit and gradcheck reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use volsplat_core::fit::{FitReport, FitResult};
use volsplat_core::grad::GradcheckReport;

use crate::atomic::write_atomic;
use crate::error::Result;
use crate::scene_file::{to_json, FORMAT_VERSION};

/// Largest fraction of parameters that may be skipped as sitting on a
/// selection boundary before a gradcheck counts as failed.
pub const MAX_SKIPPED_FRACTION: f64 = 0.05;

#[derive(Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitOutcome {
    Scene {
        kernels: usize,
    },
    Translations {
        offsets: Vec<[f64; 3]>,
    },
    Pose {
        rotation: [f64; 9],
        translation: [f64; 3],
        start: usize,
    },
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReportRecord {
    pub version: u32,
    pub procedure: String,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub diverged_at: Option<usize>,
    pub metrics: BTreeMap<String, f64>,
    pub result: FitOutcome,
}

impl FitReportRecord {
    pub fn new(procedure: &str, r: &FitReport) -> Self {
        let result = match &r.result {
            FitResult::Scene(s) => FitOutcome::Scene { kernels: s.len() },
            FitResult::Translations(t) => FitOutcome::Translations {
                offsets: t.iter().map(|v| v.to_array()).collect(),
            },
            FitResult::Pose {
                rotation,
                translation,
                start,
            } => FitOutcome::Pose {
                rotation: rotation.to_row_major(),
                translation: translation.to_array(),
                start: *start,
            },
        };
        FitReportRecord {
            version: FORMAT_VERSION,
            procedure: procedure.to_string(),
            iterations: r.iterations(),
            initial_loss: r.initial_loss,
            final_loss: r.final_loss,
            diverged_at: r.diverged_at,
            metrics: r.metrics.iter().cloned().collect(),
            result,
        }
    }
}

/// `iteration,loss` rows, one per optimisation step.
pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{l:e}");
    }
    s
}

pub fn write_fit_report(
    json_path: &Path,
    csv_path: Option<&Path>,
    procedure: &str,
    r: &FitReport,
) -> Result<()> {
    write_atomic(
        json_path,
        to_json(&FitReportRecord::new(procedure, r)).as_bytes(),
    )?;
    if let Some(p) = csv_path {
        write_atomic(p, loss_trace_csv(&r.loss_trace).as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub class: String,
    pub checked: usize,
    pub skipped_boundary: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub class: String,
    pub kernel: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRecord {
    pub version: u32,
    pub passed: bool,
    pub step: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_boundary: usize,
    pub skipped_fraction: f64,
    pub per_class: Vec<ClassRecord>,
    pub failures: Vec<FailureRecord>,
}

pub fn skipped_fraction(r: &GradcheckReport) -> f64 {
    let total = r.checked() + r.skipped();
    if total == 0 {
        0.0
    } else {
        r.skipped() as f64 / total as f64
    }
}

/// No tolerance violations and few enough boundary skips.
pub fn gradcheck_passed(r: &GradcheckReport) -> bool {
    r.passed() && r.checked() > 0 && skipped_fraction(r) < MAX_SKIPPED_FRACTION
}

impl GradcheckRecord {
    pub fn new(r: &GradcheckReport) -> Self {
        GradcheckRecord {
            version: FORMAT_VERSION,
            passed: gradcheck_passed(r),
            step: r.step,
            tolerance: r.tolerance,
            max_rel_error: r.max_rel_error(),
            checked: r.checked(),
            skipped_boundary: r.skipped(),
            skipped_fraction: skipped_fraction(r),
            per_class: r
                .per_class
                .iter()
                .map(|(c, s)| ClassRecord {
                    class: c.name().to_string(),
                    checked: s.checked,
                    skipped_boundary: s.skipped_boundary,
                    max_rel_error: s.max_rel_error,
                })
                .collect(),
            failures: r
                .failures
                .iter()
                .map(|f| FailureRecord {
                    class: f.class.name().to_string(),
                    kernel: f.kernel,
                    coord: f.coord,
                    analytic: f.analytic,
                    numeric: f.numeric,
                    rel_error: f.rel_error,
                })
                .collect(),
        }
    }
}
