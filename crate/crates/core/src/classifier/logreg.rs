//! L2-regularized multinomial logistic regression.
//!
//! Features are z-scored with training statistics. The objective is the
//! (class-weighted) mean cross-entropy plus `‖W‖² / (2·C·N)`, i.e. the
//! sklearn objective `½‖W‖² + C·Σ CE` divided by `C·N`; biases are not
//! penalized. It is minimized by gradient descent with an Armijo backtracking
//! line search, which keeps the loss non-increasing across iterations.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::data::{Dataset, OrdinalLabel};
use crate::error::{Error, Result};

/// Posterior probabilities are clamped to `[FLOOR, 1 - FLOOR]` and renormalized.
pub const POSTERIOR_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassWeighting {
    Uniform,
    Balanced,
}

impl std::str::FromStr for ClassWeighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(ClassWeighting::Uniform),
            "balanced" => Ok(ClassWeighting::Balanced),
            other => Err(Error::Parameter(format!("unknown class weighting `{other}`"))),
        }
    }
}

impl std::fmt::Display for ClassWeighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassWeighting::Uniform => "uniform",
            ClassWeighting::Balanced => "balanced",
        })
    }
}

/// Classifier hyperparameters. `reg` is the inverse regularization strength C:
/// smaller values regularize more.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub reg: f64,
    pub weighting: ClassWeighting,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            reg: 1.0,
            weighting: ClassWeighting::Uniform,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 1000,
            grad_tol: 1e-5,
        }
    }
}

/// Per-column z-scoring. Constant columns map to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    /// Reciprocal standard deviation, or 0 for constant columns.
    pub inv_scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.rows() {
            for ((v, &xi), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        let inv_scale = var.mapv(|v| {
            let sd = (v / n).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                0.0
            }
        });
        Standardizer { mean, inv_scale }
    }

    pub fn identity(dims: usize) -> Self {
        Standardizer {
            mean: Array1::zeros(dims),
            inv_scale: Array1::ones(dims),
        }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.inv_scale) {
                *v = (*v - m) * s;
            }
        }
        out
    }
}

/// Optimizer diagnostics recorded during [`ProbClassifier::fit`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Objective value after initialization and after every accepted step.
    pub losses: Vec<f64>,
}

/// The training objective over standardized features.
///
/// Parameters are laid out class-major: for each active class, `dims`
/// weights followed by the bias.
pub struct Objective<'a> {
    x: ArrayView2<'a, f64>,
    onehot: Array2<f64>,
    sample_weight: Array1<f64>,
    penalty: f64,
    k: usize,
}

impl<'a> Objective<'a> {
    /// `targets` are active-class indices in `0..k`; `sample_weight` must sum to 1.
    pub fn new(x: ArrayView2<'a, f64>, targets: &[usize], k: usize, sample_weight: Array1<f64>, reg: f64) -> Self {
        let mut onehot = Array2::zeros((x.nrows(), k));
        for (i, &t) in targets.iter().enumerate() {
            onehot[[i, t]] = 1.0;
        }
        let penalty = 1.0 / (reg * x.nrows() as f64);
        Objective {
            x,
            onehot,
            sample_weight,
            penalty,
            k,
        }
    }

    pub fn n_params(&self) -> usize {
        self.k * (self.x.ncols() + 1)
    }

    fn unpack(&self, theta: &[f64]) -> (Array2<f64>, Array1<f64>) {
        let d = self.x.ncols();
        let mut w = Array2::zeros((self.k, d));
        let mut b = Array1::zeros(self.k);
        for c in 0..self.k {
            let base = c * (d + 1);
            for j in 0..d {
                w[[c, j]] = theta[base + j];
            }
            b[c] = theta[base + d];
        }
        (w, b)
    }

    /// Log-softmax of the logits, row-wise.
    fn log_probs(&self, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
        let mut z = self.x.dot(&w.t()) + b;
        for mut row in z.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        z
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let (w, b) = self.unpack(theta);
        let lp = self.log_probs(&w, &b);
        let ce: f64 = lp
            .rows()
            .into_iter()
            .zip(self.onehot.rows())
            .zip(&self.sample_weight)
            .map(|((l, y), &sw)| -sw * l.dot(&y))
            .sum();
        ce + 0.5 * self.penalty * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (w, b) = self.unpack(theta);
        let lp = self.log_probs(&w, &b);
        let ce: f64 = lp
            .rows()
            .into_iter()
            .zip(self.onehot.rows())
            .zip(&self.sample_weight)
            .map(|((l, y), &sw)| -sw * l.dot(&y))
            .sum();
        let value = ce + 0.5 * self.penalty * w.iter().map(|v| v * v).sum::<f64>();

        let mut resid = lp.mapv(f64::exp) - &self.onehot;
        for (mut row, &sw) in resid.rows_mut().into_iter().zip(&self.sample_weight) {
            row *= sw;
        }
        let gw = resid.t().dot(&self.x) + &(&w * self.penalty);
        let gb = resid.sum_axis(Axis(0));
        let d = self.x.ncols();
        let mut grad = vec![0.0; self.n_params()];
        for c in 0..self.k {
            let base = c * (d + 1);
            for j in 0..d {
                grad[base + j] = gw[[c, j]];
            }
            grad[base + d] = gb[c];
        }
        (value, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A fitted multinomial logistic regression over `n_classes` ordinal classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbClassifier {
    n_classes: usize,
    /// `n_classes × dims`; rows of inactive classes are zero.
    weights: Array2<f64>,
    /// Bias per class; `-inf` for classes absent from training.
    bias: Array1<f64>,
    standardizer: Standardizer,
    diagnostics: FitDiagnostics,
}

impl ProbClassifier {
    pub fn fit(train: &Dataset, hyper: Hyper) -> Result<Self> {
        Self::fit_with(train.features(), train.labels(), train.n_classes(), hyper, FitOptions::default())
    }

    pub fn fit_with(
        x: ArrayView2<'_, f64>,
        labels: &[OrdinalLabel],
        n_classes: usize,
        hyper: Hyper,
        opts: FitOptions,
    ) -> Result<Self> {
        if !(hyper.reg > 0.0 && hyper.reg.is_finite()) {
            return Err(Error::Parameter(format!("regularization must be positive, got {}", hyper.reg)));
        }
        if labels.len() != x.nrows() {
            return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), labels.len())));
        }
        let mut counts = vec![0usize; n_classes];
        for l in labels {
            counts[l.index()] += 1;
        }
        let active: Vec<usize> = (0..n_classes).filter(|&c| counts[c] > 0).collect();
        if active.len() < 2 {
            return Err(Error::DegenerateTraining(format!(
                "need at least 2 distinct labels, found {}",
                active.len()
            )));
        }
        let k = active.len();
        let mut slot = vec![usize::MAX; n_classes];
        for (s, &c) in active.iter().enumerate() {
            slot[c] = s;
        }
        let targets: Vec<usize> = labels.iter().map(|l| slot[l.index()]).collect();
        let n = labels.len() as f64;
        let sample_weight: Array1<f64> = match hyper.weighting {
            ClassWeighting::Uniform => Array1::from_elem(labels.len(), 1.0 / n),
            ClassWeighting::Balanced => labels
                .iter()
                .map(|l| 1.0 / (k as f64 * counts[l.index()] as f64))
                .collect(),
        };

        let standardizer = Standardizer::fit(x);
        let xs = standardizer.transform(x);
        let d = xs.ncols();
        let objective = Objective::new(xs.view(), &targets, k, sample_weight.clone(), hyper.reg);

        // Start from the (weighted) class log-frequencies.
        let mut theta = vec![0.0; objective.n_params()];
        let mut class_mass = vec![0.0; k];
        for (&t, &sw) in targets.iter().zip(&sample_weight) {
            class_mass[t] += sw;
        }
        let mean_log = class_mass.iter().map(|m| m.ln()).sum::<f64>() / k as f64;
        for (c, m) in class_mass.iter().enumerate() {
            theta[c * (d + 1) + d] = m.ln() - mean_log;
        }

        let diagnostics = minimize(&objective, &mut theta, opts);

        let mut weights = Array2::zeros((n_classes, d));
        let mut bias = Array1::from_elem(n_classes, f64::NEG_INFINITY);
        for (s, &c) in active.iter().enumerate() {
            let base = s * (d + 1);
            for j in 0..d {
                weights[[c, j]] = theta[base + j];
            }
            bias[c] = theta[base + d];
        }
        Ok(ProbClassifier {
            n_classes,
            weights,
            bias,
            standardizer,
            diagnostics,
        })
    }

    /// Assembles a model from explicit parameters (features used as given
    /// when `standardizer` is `None`).
    pub fn from_parts(weights: Array2<f64>, bias: Array1<f64>, standardizer: Option<Standardizer>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "{} weight rows but {} biases",
                weights.nrows(),
                bias.len()
            )));
        }
        let standardizer = standardizer.unwrap_or_else(|| Standardizer::identity(weights.ncols()));
        if standardizer.mean.len() != weights.ncols() {
            return Err(Error::Shape("standardizer width differs from weights".into()));
        }
        Ok(ProbClassifier {
            n_classes: weights.nrows(),
            weights,
            bias,
            standardizer,
            diagnostics: FitDiagnostics::default(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dims(&self) -> usize {
        self.weights.ncols()
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dims() {
            return Err(Error::Shape(format!(
                "model expects {} columns, input has {}",
                self.dims(),
                x.ncols()
            )));
        }
        let xs = self.standardizer.transform(x);
        let mut p = xs.dot(&self.weights.t()) + &self.bias;
        for mut row in p.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| (v / s).clamp(POSTERIOR_FLOOR, 1.0 - POSTERIOR_FLOOR));
            let s = row.sum();
            row /= s;
        }
        Ok(p)
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<OrdinalLabel>> {
        Ok(argmax_rows(self.predict_proba(x)?.view()))
    }

    /// Plain-text dump of the parameters and standardization statistics.
    pub fn to_text(&self) -> String {
        fn line<'a>(tag: &str, vals: impl IntoIterator<Item = &'a f64>) -> String {
            let body: Vec<String> = vals.into_iter().map(|v| v.to_string()).collect();
            format!("{tag} {}\n", body.join(" "))
        }
        let mut s = format!("featquant-logreg 1\nclasses {}\ndims {}\n", self.n_classes, self.dims());
        s += &line("mean", &self.standardizer.mean);
        s += &line("inv_scale", &self.standardizer.inv_scale);
        s += &line("bias", &self.bias);
        for row in self.weights.rows() {
            s += &line("w", row);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("model file: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some("featquant-logreg 1") {
            return Err(bad("missing header"));
        }
        let mut field = |tag: &str| -> Result<Vec<f64>> {
            let l = lines.next().ok_or_else(|| bad("truncated"))?;
            let mut parts = l.split_whitespace();
            if parts.next() != Some(tag) {
                return Err(bad(&format!("expected `{tag}`")));
            }
            parts
                .map(|p| p.parse::<f64>().map_err(|_| bad(&format!("invalid number `{p}`"))))
                .collect()
        };
        let k = field("classes")?.first().copied().ok_or_else(|| bad("classes"))? as usize;
        let d = field("dims")?.first().copied().ok_or_else(|| bad("dims"))? as usize;
        let mean = Array1::from(field("mean")?);
        let inv_scale = Array1::from(field("inv_scale")?);
        let bias = Array1::from(field("bias")?);
        let mut w = Vec::with_capacity(k * d);
        for _ in 0..k {
            w.extend(field("w")?);
        }
        let weights = Array2::from_shape_vec((k, d), w).map_err(|e| bad(&e.to_string()))?;
        Self::from_parts(weights, bias, Some(Standardizer { mean, inv_scale }))
    }
}

/// Argmax per row with lowest-index tie-breaking.
pub fn argmax_rows(p: ArrayView2<'_, f64>) -> Vec<OrdinalLabel> {
    p.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            OrdinalLabel::from_index(best)
        })
        .collect()
}

/// Gradient descent with Armijo backtracking. The trial step is the
/// Barzilai-Borwein estimate from the previous iteration.
fn minimize(objective: &Objective<'_>, theta: &mut [f64], opts: FitOptions) -> FitDiagnostics {
    const ARMIJO: f64 = 1e-4;
    let (mut f, mut g) = objective.value_and_gradient(theta);
    let mut losses = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut gnorm = dot(&g, &g).sqrt();
    let mut converged = gnorm < opts.grad_tol;
    let mut trial = vec![0.0; theta.len()];
    while !converged && iterations < opts.max_iter {
        let gg = gnorm * gnorm;
        let mut t = step;
        let mut f_trial;
        loop {
            for ((tr, &th), &gi) in trial.iter_mut().zip(theta.iter()).zip(&g) {
                *tr = th - t * gi;
            }
            f_trial = objective.value(&trial);
            if f_trial <= f - ARMIJO * t * gg {
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                break;
            }
        }
        if f_trial.is_nan() || f_trial > f {
            // No descent possible at machine precision.
            break;
        }
        let (_, g_new) = objective.value_and_gradient(&trial);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..theta.len() {
            let s = trial[i] - theta[i];
            let y = g_new[i] - g[i];
            ss += s * s;
            sy += s * y;
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { (t * 2.0).min(1e10) };
        theta.copy_from_slice(&trial);
        f = f_trial;
        g = g_new;
        gnorm = dot(&g, &g).sqrt();
        losses.push(f);
        iterations += 1;
        converged = gnorm < opts.grad_tol;
    }
    FitDiagnostics {
        iterations,
        converged,
        grad_norm: gnorm,
        losses,
    }
}
