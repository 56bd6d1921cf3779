use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Family, ProbeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeTask {
    A,
    B,
}

impl ProbeTask {
    pub fn metric_name(self) -> &'static str {
        match self {
            ProbeTask::A => "accuracy",
            ProbeTask::B => "mse",
        }
    }

    /// True if `a` is a strictly better metric value than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            ProbeTask::A => a > b,
            ProbeTask::B => a < b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: Family,
    pub mean: f64,
    pub per_fold: Vec<f64>,
    /// Strength used in each fold (0 for the unregularized family).
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub family: Family,
    pub with_cluster: f64,
    pub without_cluster: f64,
    /// `with_cluster − without_cluster`.
    pub delta: f64,
    pub without_per_fold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub task: ProbeTask,
    pub metric: String,
    pub seed: u64,
    pub fold_count: usize,
    pub rows: usize,
    pub feature_width: usize,
    /// Task A: number of classes actually present.
    pub class_count: Option<usize>,
    pub exclude_invalid: bool,
    pub lambda_grid: Vec<f64>,
    pub families: Vec<FamilyResult>,
    pub best_family: Family,
    pub ablation: Option<Ablation>,
    /// Task B: worst normal-equation residual over every closed-form fit.
    pub max_normal_residual: Option<f64>,
}

impl ProbeReport {
    pub fn family(&self, family: Family) -> Option<&FamilyResult> {
        self.families.iter().find(|f| f.family == family)
    }

    pub fn best(&self) -> &FamilyResult {
        self.family(self.best_family).expect("best family is always present")
    }

    pub fn to_json(&self) -> Result<String, ProbeError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ProbeError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Fixed-width table: one row per report, columns for each regularizer
/// family, then the ablation.
pub fn render_table(reports: &[ProbeReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12}{:>10}{:>10}{:>10}  {:<7}{:>10}{:>10}{:>10}",
        "Task", "None", "Ridge", "Lasso", "Abl.", "With", "Without", "Delta"
    );
    for r in reports {
        let name = match r.task {
            ProbeTask::A => "A (Acc ^)",
            ProbeTask::B => "B (MSE v)",
        };
        let fam = |f| cell(r.family(f).map(|x| x.mean));
        let (abl, with, without, delta) = match &r.ablation {
            Some(a) => (
                a.family.label().to_string(),
                cell(Some(a.with_cluster)),
                cell(Some(a.without_cluster)),
                format!("{:+.4}", a.delta),
            ),
            None => ("-".into(), "-".into(), "-".into(), "-".into()),
        };
        let _ = writeln!(
            out,
            "{:<12}{:>10}{:>10}{:>10}  {:<7}{:>10}{:>10}{:>10}",
            name,
            fam(Family::None),
            fam(Family::Ridge),
            fam(Family::Lasso),
            abl,
            with,
            without,
            delta
        );
    }
    out
}

/// Per-fold metrics: `task,family,variant,fold,lambda,metric`.
pub fn render_csv(reports: &[ProbeReport]) -> String {
    let mut out = String::from("task,family,variant,fold,lambda,metric\n");
    for r in reports {
        let task = match r.task {
            ProbeTask::A => "A",
            ProbeTask::B => "B",
        };
        for f in &r.families {
            for (i, (m, l)) in f.per_fold.iter().zip(&f.lambdas).enumerate() {
                let _ = writeln!(out, "{task},{},with_cluster,{i},{l},{m}", f.family.label());
            }
        }
        if let Some(a) = &r.ablation {
            let lambdas = &r.family(a.family).expect("ablated family present").lambdas;
            for (i, (m, l)) in a.without_per_fold.iter().zip(lambdas).enumerate() {
                let _ = writeln!(out, "{task},{},without_cluster,{i},{l},{m}", a.family.label());
            }
        }
    }
    out
}
