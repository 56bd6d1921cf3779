//! Cross-validated probe runs with the regularization sweep and ablation.

use std::cell::Cell;
use std::ops::Range;

use crate::ingest::{ComparisonRecord, Outcome};
use crate::matrix::Matrix;
use crate::tasktyping::TaskTypeModel;

use super::features::{build_features_a, build_features_b, task_a_class, LayoutA, LayoutB, ModelIndex};
use super::folds::{complement, stratified_folds};
use super::logreg::{accuracy, fit_multinomial_logreg_from, predict_logreg, LogRegConfig, LogRegModel, Penalty};
use super::report::{mean, Ablation, FamilyResult, ProbeReport, ProbeTask};
use super::ridge::{fit_lasso, fit_ridge, mse, LinearModel};
use super::{Family, ProbeConfig, ProbeError};

/// One task's fit/score rule.
trait Learner {
    type Model;
    const TASK: ProbeTask;

    fn fit(
        &self,
        x: &Matrix,
        rows: &[usize],
        family: Family,
        lambda: f64,
        warm: Option<&Self::Model>,
    ) -> Result<Self::Model, ProbeError>;

    fn score(&self, model: &Self::Model, x: &Matrix, rows: &[usize]) -> Result<f64, ProbeError>;

    /// Warm start for a refit on the feature subset `keep`, if the learner
    /// uses one.
    fn restrict(&self, model: &Self::Model, keep: &[usize]) -> Option<Self::Model>;
}

struct Classifier<'a> {
    y: &'a [usize],
    classes: usize,
    config: &'a ProbeConfig,
}

impl Learner for Classifier<'_> {
    type Model = LogRegModel;
    const TASK: ProbeTask = ProbeTask::A;

    fn fit(
        &self,
        x: &Matrix,
        rows: &[usize],
        family: Family,
        lambda: f64,
        warm: Option<&LogRegModel>,
    ) -> Result<LogRegModel, ProbeError> {
        let penalty = match family {
            Family::None => Penalty::None,
            Family::Ridge => Penalty::L2,
            Family::Lasso => Penalty::L1,
        };
        let cfg = LogRegConfig {
            penalty,
            lambda,
            max_iters: self.config.max_iters,
            tol: self.config.tol,
        };
        let y: Vec<usize> = rows.iter().map(|&i| self.y[i]).collect();
        fit_multinomial_logreg_from(&x.select_rows(rows), &y, self.classes, &cfg, warm)
    }

    fn score(&self, model: &LogRegModel, x: &Matrix, rows: &[usize]) -> Result<f64, ProbeError> {
        let (pred, _) = predict_logreg(model, &x.select_rows(rows))?;
        let truth: Vec<usize> = rows.iter().map(|&i| self.y[i]).collect();
        Ok(accuracy(&pred, &truth))
    }

    fn restrict(&self, model: &LogRegModel, keep: &[usize]) -> Option<LogRegModel> {
        Some(LogRegModel {
            weights: model.weights.select_rows(keep),
            intercepts: model.intercepts.clone(),
            iterations: 0,
            converged: false,
        })
    }
}

struct Regressor<'a> {
    y: &'a [f64],
    max_residual: Cell<f64>,
}

impl Learner for Regressor<'_> {
    type Model = LinearModel;
    const TASK: ProbeTask = ProbeTask::B;

    fn fit(
        &self,
        x: &Matrix,
        rows: &[usize],
        family: Family,
        lambda: f64,
        _warm: Option<&LinearModel>,
    ) -> Result<LinearModel, ProbeError> {
        let y: Vec<f64> = rows.iter().map(|&i| self.y[i]).collect();
        let xs = x.select_rows(rows);
        let m = match family {
            Family::None => fit_ridge(&xs, &y, 0.0)?,
            Family::Ridge => fit_ridge(&xs, &y, lambda)?,
            Family::Lasso => fit_lasso(&xs, &y, lambda)?,
        };
        if let Some(r) = m.normal_residual {
            self.max_residual.set(self.max_residual.get().max(r));
        }
        Ok(m)
    }

    fn score(&self, model: &LinearModel, x: &Matrix, rows: &[usize]) -> Result<f64, ProbeError> {
        let truth: Vec<f64> = rows.iter().map(|&i| self.y[i]).collect();
        Ok(mse(&model.predict(&x.select_rows(rows)), &truth))
    }

    fn restrict(&self, _model: &LinearModel, _keep: &[usize]) -> Option<LinearModel> {
        None
    }
}

struct Protocol<'a> {
    strata: &'a [usize],
    folds: Vec<Vec<usize>>,
    config: &'a ProbeConfig,
}

impl Protocol<'_> {
    /// Pick λ on a stratified holdout carved out of `train`; returns the
    /// chosen value and the holdout model fitted at it.
    fn select_lambda<L: Learner>(
        &self,
        learner: &L,
        x: &Matrix,
        train: &[usize],
        family: Family,
        fold: usize,
    ) -> Result<(f64, Option<L::Model>), ProbeError> {
        let grid = &self.config.lambda_grid;
        if family == Family::None || grid.is_empty() {
            return Ok((0.0, None));
        }
        if grid.len() == 1 {
            return Ok((grid[0], None));
        }
        let inner_labels: Vec<usize> = train.iter().map(|&i| self.strata[i]).collect();
        let mut counts = std::collections::BTreeMap::<usize, usize>::new();
        inner_labels.iter().for_each(|&c| *counts.entry(c).or_default() += 1);
        let inner_f = self.config.folds.min(*counts.values().min().unwrap_or(&0));
        if inner_f < 2 {
            return Err(ProbeError::InsufficientData(format!(
                "fold {fold}: a class has fewer than 2 training rows for lambda selection"
            )));
        }
        let inner = stratified_folds(&inner_labels, inner_f, self.config.seed.wrapping_add(1 + fold as u64))?;
        let val: Vec<usize> = inner[0].iter().map(|&j| train[j]).collect();
        let fit_rows: Vec<usize> = complement(train.len(), &inner[0]).into_iter().map(|j| train[j]).collect();

        // Descending λ so each fit warm-starts from a more regularized one.
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]).then(a.cmp(&b)));
        let mut scores: Vec<Option<(f64, L::Model)>> = (0..grid.len()).map(|_| None).collect();
        let mut warm: Option<usize> = None;
        for &g in &order {
            let prev = warm.and_then(|w| scores[w].as_ref().map(|(_, m)| m));
            let m = learner.fit(x, &fit_rows, family, grid[g], prev)?;
            let s = learner.score(&m, x, &val)?;
            scores[g] = Some((s, m));
            warm = Some(g);
        }
        // Best score; ties go to the smaller λ.
        let mut by_lambda: Vec<usize> = (0..grid.len()).collect();
        by_lambda.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]).then(a.cmp(&b)));
        let mut best = by_lambda[0];
        for &g in &by_lambda[1..] {
            if L::TASK.better(scores[g].as_ref().unwrap().0, scores[best].as_ref().unwrap().0) {
                best = g;
            }
        }
        let (_, model) = scores.swap_remove(best).unwrap();
        Ok((grid[best], Some(model)))
    }

    /// Outer-fold scores plus each fold's fitted model.
    fn run_family<L: Learner>(
        &self,
        learner: &L,
        x: &Matrix,
        family: Family,
    ) -> Result<(FamilyResult, Vec<L::Model>), ProbeError> {
        let n = x.rows();
        let mut per_fold = Vec::with_capacity(self.folds.len());
        let mut lambdas = Vec::with_capacity(self.folds.len());
        let mut models = Vec::with_capacity(self.folds.len());
        for (f, test) in self.folds.iter().enumerate() {
            let train = complement(n, test);
            let (lambda, warm) = self.select_lambda(learner, x, &train, family, f)?;
            let model = learner.fit(x, &train, family, lambda, warm.as_ref())?;
            per_fold.push(learner.score(&model, x, test)?);
            lambdas.push(lambda);
            models.push(model);
        }
        let result = FamilyResult {
            family,
            mean: mean(&per_fold),
            per_fold,
            lambdas,
        };
        Ok((result, models))
    }

    /// Refit at each fold's chosen λ on the design without the cluster block.
    fn ablate<L: Learner>(
        &self,
        learner: &L,
        x: &Matrix,
        cluster_block: Range<usize>,
        best: &FamilyResult,
        fold_models: &[L::Model],
    ) -> Result<Ablation, ProbeError> {
        let keep: Vec<usize> = (0..x.cols()).filter(|j| !cluster_block.contains(j)).collect();
        let reduced = x.select_cols(&keep);
        let mut without = Vec::with_capacity(self.folds.len());
        for ((test, &lambda), full) in self.folds.iter().zip(&best.lambdas).zip(fold_models) {
            let train = complement(x.rows(), test);
            // Same convex problem minus a block; the full fit is a close start.
            let warm = learner.restrict(full, &keep);
            let model = learner.fit(&reduced, &train, best.family, lambda, warm.as_ref())?;
            without.push(learner.score(&model, &reduced, test)?);
        }
        let without_cluster = mean(&without);
        Ok(Ablation {
            family: best.family,
            with_cluster: best.mean,
            without_cluster,
            delta: best.mean - without_cluster,
            without_per_fold: without,
        })
    }
}

struct Sweep {
    families: Vec<FamilyResult>,
    best: usize,
    ablation: Option<Ablation>,
}

fn sweep<L: Learner>(
    learner: &L,
    x: &Matrix,
    strata: &[usize],
    cluster_block: Range<usize>,
    config: &ProbeConfig,
) -> Result<Sweep, ProbeError> {
    if config.families.is_empty() {
        return Err(ProbeError::InsufficientData("no regularizer family selected".into()));
    }
    if let Some(&bad) = config.lambda_grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(ProbeError::BadLambda(bad));
    }
    let folds = stratified_folds(strata, config.folds, config.seed)?;
    let protocol = Protocol {
        strata,
        folds,
        config,
    };
    let mut families = Vec::new();
    let mut fold_models = Vec::new();
    let mut seen = Vec::new();
    for &family in &config.families {
        if seen.contains(&family) {
            continue;
        }
        seen.push(family);
        let (result, models) = protocol.run_family(learner, x, family)?;
        families.push(result);
        fold_models.push(models);
    }
    let mut best = 0;
    for i in 1..families.len() {
        if L::TASK.better(families[i].mean, families[best].mean) {
            best = i;
        }
    }
    let ablation = if config.skip_ablation {
        None
    } else {
        Some(protocol.ablate(learner, x, cluster_block, &families[best], &fold_models[best])?)
    };
    Ok(Sweep {
        families,
        best,
        ablation,
    })
}

fn check_clusters(records: &[ComparisonRecord], clusters: &[usize]) -> Result<(), ProbeError> {
    if records.len() != clusters.len() {
        return Err(ProbeError::ShapeMismatch(format!(
            "{} records but {} cluster assignments",
            records.len(),
            clusters.len()
        )));
    }
    Ok(())
}

/// Task A with cluster ids already assigned to every record.
pub fn run_probe_a_with_clusters(
    records: &[ComparisonRecord],
    clusters: &[usize],
    cluster_count: usize,
    config: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    check_clusters(records, clusters)?;
    let kept: Vec<usize> = (0..records.len())
        .filter(|&i| !(config.exclude_invalid && records[i].outcome == Outcome::Invalid))
        .collect();
    let models = ModelIndex::from_records(records);

    // Compact the present classes so absent ones do not get unbounded intercepts.
    let raw: Vec<usize> = kept.iter().map(|&i| task_a_class(records[i].outcome)).collect();
    let mut present = raw.clone();
    present.sort_unstable();
    present.dedup();
    let y: Vec<usize> = raw
        .iter()
        .map(|c| present.binary_search(c).expect("class present"))
        .collect();
    if present.len() < 2 {
        return Err(ProbeError::SingleClass);
    }
    if kept.len() < config.folds * present.len() {
        return Err(ProbeError::InsufficientData(format!(
            "{} usable rows for {} folds and {} classes",
            kept.len(),
            config.folds,
            present.len()
        )));
    }

    let rows = kept
        .iter()
        .map(|&i| build_features_a(&records[i], &models, clusters[i], cluster_count))
        .collect::<Result<Vec<_>, _>>()?;
    let x = Matrix::from_rows(&rows).ok_or_else(|| ProbeError::ShapeMismatch("ragged embedding differences".into()))?;
    let diff = x.cols() - 2 * models.len() - cluster_count;
    let layout = LayoutA {
        models: models.len(),
        clusters: cluster_count,
        diff,
    };

    let learner = Classifier {
        y: &y,
        classes: present.len(),
        config,
    };
    let s = sweep(&learner, &x, &y, layout.cluster_block(), config)?;
    Ok(ProbeReport {
        task: ProbeTask::A,
        metric: ProbeTask::A.metric_name().into(),
        seed: config.seed,
        fold_count: config.folds,
        rows: kept.len(),
        feature_width: layout.width(),
        class_count: Some(present.len()),
        exclude_invalid: config.exclude_invalid,
        lambda_grid: config.lambda_grid.clone(),
        best_family: s.families[s.best].family,
        families: s.families,
        ablation: s.ablation,
        max_normal_residual: None,
    })
}

/// Task B with cluster ids already assigned. Rows without a difficulty label
/// are skipped; folds are stratified by outcome (see [`pool_rare_strata`]).
pub fn run_probe_b_with_clusters(
    records: &[ComparisonRecord],
    clusters: &[usize],
    cluster_count: usize,
    config: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    check_clusters(records, clusters)?;
    let kept: Vec<usize> = (0..records.len()).filter(|&i| records[i].difficulty.is_some()).collect();
    if kept.is_empty() {
        return Err(ProbeError::NoDifficulty);
    }
    if kept.len() < 2 * config.folds {
        return Err(ProbeError::InsufficientData(format!(
            "{} labelled rows for {} folds",
            kept.len(),
            config.folds
        )));
    }
    let rows = kept
        .iter()
        .map(|&i| build_features_b(&records[i], clusters[i], cluster_count))
        .collect::<Result<Vec<_>, _>>()?;
    let x = Matrix::from_rows(&rows).expect("fixed-width rows");
    let y: Vec<f64> = kept.iter().map(|&i| records[i].difficulty.unwrap()).collect();
    let outcomes: Vec<usize> = kept.iter().map(|&i| records[i].outcome.index()).collect();
    let strata = pool_rare_strata(&outcomes, config.folds);
    let layout = LayoutB {
        clusters: cluster_count,
    };

    let learner = Regressor {
        y: &y,
        max_residual: Cell::new(0.0),
    };
    let s = sweep(&learner, &x, &strata, layout.cluster_block(), config)?;
    let has_closed_form = s.families.iter().any(|f| f.family != Family::Lasso);
    Ok(ProbeReport {
        task: ProbeTask::B,
        metric: ProbeTask::B.metric_name().into(),
        seed: config.seed,
        fold_count: config.folds,
        rows: kept.len(),
        feature_width: layout.width(),
        class_count: None,
        exclude_invalid: false,
        lambda_grid: config.lambda_grid.clone(),
        best_family: s.families[s.best].family,
        families: s.families,
        ablation: s.ablation,
        max_normal_residual: has_closed_form.then(|| learner.max_residual.get()),
    })
}

/// Outcome strata with fewer than `folds` members are pooled into one extra
/// stratum; if the pool is still too small it joins the largest stratum.
/// Difficulty labels make no promise about every outcome being common.
fn pool_rare_strata(labels: &[usize], folds: usize) -> Vec<usize> {
    let mut counts = std::collections::BTreeMap::<usize, usize>::new();
    labels.iter().for_each(|&c| *counts.entry(c).or_default() += 1);
    let rare: Vec<usize> = counts.iter().filter(|(_, &n)| n < folds).map(|(&c, _)| c).collect();
    if rare.is_empty() {
        return labels.to_vec();
    }
    let pooled: usize = rare.iter().map(|c| counts[c]).sum();
    let target = if pooled >= folds {
        Outcome::ALL.len()
    } else {
        counts
            .iter()
            .filter(|(c, _)| !rare.contains(c))
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map_or(Outcome::ALL.len(), |(&c, _)| c)
    };
    labels
        .iter()
        .map(|c| if rare.contains(c) { target } else { *c })
        .collect()
}

/// Type every record's prompt with `task_model`'s own embedder.
pub fn assign_clusters(records: &[ComparisonRecord], task_model: &TaskTypeModel) -> Result<Vec<usize>, ProbeError> {
    records
        .iter()
        .map(|r| Ok(task_model.assign(&r.prompt_text, &task_model.embedder)?.cluster))
        .collect()
}

pub fn run_probe_a(
    records: &[ComparisonRecord],
    task_model: &TaskTypeModel,
    config: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    let clusters = assign_clusters(records, task_model)?;
    run_probe_a_with_clusters(records, &clusters, task_model.cluster_count(), config)
}

pub fn run_probe_b(
    records: &[ComparisonRecord],
    task_model: &TaskTypeModel,
    config: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    let clusters = assign_clusters(records, task_model)?;
    run_probe_b_with_clusters(records, &clusters, task_model.cluster_count(), config)
}
