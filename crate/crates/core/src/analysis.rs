//! Accuracy scaling fits and everything downstream of them: marginal
//! utility, regime classification, saturation, Pareto frontiers,
//! cost-constrained budget choice, truncation-loss integrals, the
//! compute-vs-thinking loss law, and the complexity-based allocation policy.
//!
//! Natural logarithms throughout. All computations are pure and
//! deterministic.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AccuracyPoint, BudgetSpec};
use crate::runner::AccuracySummary;

// --- scaling law -----------------------------------------------------------

/// Accuracy = alpha*ln(T_b+1) + beta*ln(M_s) + gamma, residual std sigma.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub n_points: usize,
}

/// Least-squares fit on regressors [ln(t_b+1), ln(m_s), 1], weighted by each
/// point's trial count n.
pub fn fit_scaling_law(points: &[AccuracyPoint]) -> Result<ScalingFit> {
    fit_core(points, true)
}

/// Same fit with every point weighted equally, regardless of n.
pub fn fit_scaling_law_unweighted(points: &[AccuracyPoint]) -> Result<ScalingFit> {
    fit_core(points, false)
}

fn fit_core(points: &[AccuracyPoint], weight_by_n: bool) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "three free parameters need at least 3 points, got {}",
            points.len()
        )));
    }
    let mut problems = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !(p.model_size > 0.0) || !p.model_size.is_finite() {
            problems.push(format!("point {i}: model_size {} must be positive and finite", p.model_size));
        }
        if !p.accuracy.is_finite() {
            problems.push(format!("point {i}: accuracy {} is not finite", p.accuracy));
        }
        if p.n == 0 {
            problems.push(format!("point {i}: n must be at least 1"));
        }
        if p.budget.is_unlimited() {
            problems.push(format!(
                "point {i}: unlimited budget must be pre-mapped to the observed mean thinking tokens"
            ));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Analysis(problems.join("; ")));
    }

    let budgets: BTreeSet<u64> =
        points.iter().map(|p| p.budget.token_limit().expect("finite checked")).collect();
    if budgets.len() < 2 {
        return Err(Error::DegenerateFit(
            "all points share a single budget; ln(budget+1) is collinear with the intercept".to_string(),
        ));
    }
    let sizes: BTreeSet<u64> = points.iter().map(|p| p.model_size.to_bits()).collect();
    if sizes.len() < 2 {
        return Err(Error::DegenerateFit(
            "all points share a single model size; ln(model_size) is collinear with the intercept"
                .to_string(),
        ));
    }

    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    let mut weight_sum = 0.0;
    let rows: Vec<([f64; 3], f64, f64)> = points
        .iter()
        .map(|p| {
            let t = p.budget.token_limit().expect("finite checked") as f64;
            let x = [(t + 1.0).ln(), p.model_size.ln(), 1.0];
            let w = if weight_by_n { p.n as f64 } else { 1.0 };
            (x, p.accuracy, w)
        })
        .collect();
    for (x, y, w) in &rows {
        weight_sum += w;
        for i in 0..3 {
            atb[i] += w * x[i] * y;
            for j in 0..3 {
                ata[i][j] += w * x[i] * x[j];
            }
        }
    }

    let theta = solve3(ata, atb).map_err(|col| {
        let name = ["ln(budget+1)", "ln(model_size)", "intercept"][col];
        Error::DegenerateFit(format!("design matrix is rank deficient in the {name} regressor"))
    })?;

    let mut weighted_sse = 0.0;
    for (x, y, w) in &rows {
        let fitted: f64 = (0..3).map(|i| theta[i] * x[i]).sum();
        weighted_sse += w * (y - fitted) * (y - fitted);
    }
    let n = points.len();
    let sigma = if n > 3 {
        ((weighted_sse / weight_sum) * (n as f64 / (n as f64 - 3.0))).sqrt()
    } else {
        0.0
    };

    Ok(ScalingFit { alpha: theta[0], beta: theta[1], gamma: theta[2], sigma, n_points: n })
}

/// Gaussian elimination with partial pivoting on a 3x3 system. On rank
/// deficiency returns the offending column index.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> std::result::Result<[f64; 3], usize> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let tol = scale * 1e-12;
    for k in 0..3 {
        let pivot = (k..3).max_by(|&r, &s| a[r][k].abs().total_cmp(&a[s][k].abs())).unwrap();
        if a[pivot][k].abs() < tol {
            return Err(k);
        }
        a.swap(k, pivot);
        b.swap(k, pivot);
        for r in (k + 1)..3 {
            let f = a[r][k] / a[k][k];
            for c in k..3 {
                a[r][c] -= f * a[k][c];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = [0.0f64; 3];
    for k in (0..3).rev() {
        let mut s = b[k];
        for c in (k + 1)..3 {
            s -= a[k][c] * x[c];
        }
        x[k] = s / a[k][k];
    }
    Ok(x)
}

/// Converts pipeline summaries to fit points, resolving model names to sizes
/// and replacing Unlimited budgets with the observed mean thinking tokens of
/// that condition. This is where accuracy is held to [0,1].
pub fn points_from_summaries(
    summaries: &[AccuracySummary],
    sizes: &BTreeMap<String, f64>,
) -> Result<Vec<AccuracyPoint>> {
    let mut problems = Vec::new();
    let mut out = Vec::new();
    for s in summaries {
        let Some(&model_size) = sizes.get(&s.model) else {
            problems.push(format!("no size known for model {}", s.model));
            continue;
        };
        let budget = if s.budget.is_unlimited() {
            let observed = s.mean_thinking_tokens.round().max(1.0);
            if !observed.is_finite() || observed > u32::MAX as f64 {
                problems.push(format!(
                    "model {} budget inf: mean_thinking_tokens {} cannot stand in as a budget",
                    s.model, s.mean_thinking_tokens
                ));
                continue;
            }
            BudgetSpec::tokens(observed as u32)
        } else {
            s.budget
        };
        let point = AccuracyPoint { budget, model_size, accuracy: s.accuracy, n: s.n };
        for msg in point.problems() {
            problems.push(format!("model {} budget {}: {msg}", s.model, s.budget));
        }
        out.push(point);
    }
    if !problems.is_empty() {
        return Err(Error::Analysis(problems.join("; ")));
    }
    Ok(out)
}

// --- prediction -------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Clamped to [0,1].
    pub value: f64,
    /// The unclamped regression value.
    pub raw: f64,
    pub clamped: bool,
}

/// Evaluates the fitted law. `t_b` may dip slightly below zero (it must stay
/// above -1) so centered finite differences at t_b = 0 are well defined.
pub fn predict_accuracy(fit: &ScalingFit, t_b: f64, m_s: f64) -> Result<Prediction> {
    if !t_b.is_finite() || t_b <= -1.0 {
        return Err(Error::Analysis(format!("budget {t_b} must be a finite value above -1")));
    }
    if !(m_s > 0.0) || !m_s.is_finite() {
        return Err(Error::Analysis(format!("model size {m_s} must be positive and finite")));
    }
    let raw = fit.alpha * (t_b + 1.0).ln() + fit.beta * m_s.ln() + fit.gamma;
    let value = raw.clamp(0.0, 1.0);
    Ok(Prediction { value, raw, clamped: value != raw })
}

/// d(accuracy)/d(t_b) of the fitted law: alpha/(t_b+1).
pub fn marginal_utility(alpha: f64, t_b: f64) -> f64 {
    debug_assert!(t_b >= 0.0, "marginal utility is defined for nonnegative budgets");
    alpha / (t_b + 1.0)
}

/// Smallest integer budget whose marginal utility falls below epsilon. The
/// closed form floor(alpha/epsilon - 1) + 1 is corrected by a step in each
/// direction so float rounding near the boundary cannot shift the answer.
pub fn saturation_budget(alpha: f64, epsilon: f64) -> Result<u64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Analysis(format!("alpha {alpha} must be positive and finite")));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Analysis(format!("epsilon {epsilon} must be positive and finite")));
    }
    let below = |t: u64| alpha / (t as f64 + 1.0) < epsilon;
    let guess = (alpha / epsilon - 1.0).floor().max(0.0);
    let mut t = guess as u64;
    while !below(t) {
        t += 1;
    }
    while t > 0 && below(t - 1) {
        t -= 1;
    }
    Ok(t)
}

// --- regimes ---------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeLabel {
    HighEfficiency,
    Balanced,
    HighAccuracy,
}

impl std::fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegimeLabel::HighEfficiency => "high-efficiency",
            RegimeLabel::Balanced => "balanced",
            RegimeLabel::HighAccuracy => "high-accuracy",
        })
    }
}

/// Classifies a marginal utility. Boundaries close downward: exactly 3e-4 is
/// Balanced, exactly 1e-4 is HighAccuracy.
pub fn classify_efficiency(e: f64) -> RegimeLabel {
    debug_assert!(e >= 0.0, "efficiency is a nonnegative marginal utility");
    if e > 3e-4 {
        RegimeLabel::HighEfficiency
    } else if e > 1e-4 {
        RegimeLabel::Balanced
    } else {
        RegimeLabel::HighAccuracy
    }
}

/// Band a budget by token count: [0,256) high-efficiency, [256,512) balanced,
/// 512 and up (including unlimited) high-accuracy.
pub fn regime_for_budget(budget: BudgetSpec) -> RegimeLabel {
    match budget.token_limit() {
        None => RegimeLabel::HighAccuracy,
        Some(t) if t < 256 => RegimeLabel::HighEfficiency,
        Some(t) if t < 512 => RegimeLabel::Balanced,
        Some(_) => RegimeLabel::HighAccuracy,
    }
}

// --- frontier and cost -------------------------------------------------------

/// Keeps every (budget, accuracy) point no strictly-cheaper point matches or
/// beats, sorted by budget ascending. Budgets must be distinct.
pub fn pareto_frontier(points: &[(u64, f64)]) -> Result<Vec<(u64, f64)>> {
    let mut seen = BTreeSet::new();
    for &(budget, accuracy) in points {
        if !seen.insert(budget) {
            return Err(Error::Analysis(format!("duplicate budget {budget} in frontier input")));
        }
        if !accuracy.is_finite() {
            return Err(Error::Analysis(format!("accuracy {accuracy} at budget {budget} is not finite")));
        }
    }
    let mut sorted: Vec<(u64, f64)> = points.to_vec();
    sorted.sort_by_key(|&(budget, _)| budget);
    let mut out = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for (budget, accuracy) in sorted {
        if accuracy > best {
            out.push((budget, accuracy));
            best = accuracy;
        }
    }
    Ok(out)
}

/// Linear cost of a budgeted call: c0 + c1 * tokens, capped at c_max.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub c0: f64,
    pub c1: f64,
    pub c_max: f64,
}

impl CostModel {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("c0", self.c0), ("c1", self.c1), ("c_max", self.c_max)] {
            if !v.is_finite() || v < 0.0 {
                out.push(format!("{name} = {v} must be nonnegative and finite"));
            }
        }
        if !(self.c_max > 0.0) {
            out.push(format!("c_max = {} must be positive", self.c_max));
        }
        if self.c0 > self.c_max {
            out.push(format!(
                "c0 = {} exceeds c_max = {}; even a zero-token call is unaffordable",
                self.c0, self.c_max
            ));
        }
        out
    }

    pub fn cost_of(&self, tokens: u64) -> f64 {
        self.c0 + self.c1 * tokens as f64
    }
}

/// Highest-accuracy point affordable under the cost model; ties go to the
/// smallest budget.
pub fn optimal_budget(points: &[(u64, f64)], cost: &CostModel) -> Result<(u64, f64)> {
    let problems = cost.problems();
    if !problems.is_empty() {
        return Err(Error::Analysis(problems.join("; ")));
    }
    if points.is_empty() {
        return Err(Error::Analysis("no candidate points".to_string()));
    }
    let mut best: Option<(u64, f64)> = None;
    for &(budget, accuracy) in points {
        if cost.cost_of(budget) > cost.c_max {
            continue;
        }
        best = Some(match best {
            None => (budget, accuracy),
            Some((bb, ba)) => {
                if accuracy > ba || (accuracy == ba && budget < bb) {
                    (budget, accuracy)
                } else {
                    (bb, ba)
                }
            }
        });
    }
    best.ok_or_else(|| {
        let cheapest = points
            .iter()
            .map(|&(budget, _)| cost.cost_of(budget))
            .fold(f64::INFINITY, f64::min);
        Error::InfeasibleCost { cheapest }
    })
}

// --- truncation loss ----------------------------------------------------------

/// Trapezoidal integral of p(t)*v(t) over the integer grid [t_b, t_full].
/// `p` and `v` are sampled at t = 0..=t_full.
pub fn truncation_loss(p: &[f64], v: &[f64], t_b: usize, t_full: usize) -> Result<f64> {
    if p.len() != t_full + 1 || v.len() != t_full + 1 {
        return Err(Error::Analysis(format!(
            "need t_full+1 = {} samples, got p: {}, v: {}",
            t_full + 1,
            p.len(),
            v.len()
        )));
    }
    if t_b > t_full {
        return Err(Error::Analysis(format!("t_b {t_b} exceeds t_full {t_full}")));
    }
    for (name, samples) in [("p", p), ("v", v)] {
        if let Some(bad) = samples.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::Analysis(format!("{name} contains a negative or non-finite sample {bad}")));
        }
    }
    let w = |t: usize| p[t] * v[t];
    let mut total = 0.0;
    for t in t_b..t_full {
        total += (w(t) + w(t + 1)) / 2.0;
    }
    Ok(total)
}

// --- loss law ----------------------------------------------------------------

/// L(N, T_b) = (N_c/N)^alpha_n * (T_c/(T_b+T_0))^alpha_t.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossLawFit {
    pub n_c: f64,
    pub alpha_n: f64,
    pub t_c: f64,
    pub alpha_t: f64,
    pub t0: f64,
    /// Present when the fit is suspect (grid-edge minimizer or clamped
    /// exponents); prediction quality is not guaranteed.
    pub warning: Option<String>,
}

impl LossLawFit {
    pub fn predict_ln(&self, n: f64, t_b: f64) -> f64 {
        self.alpha_n * (self.n_c.ln() - n.ln()) + self.alpha_t * (self.t_c.ln() - (t_b + self.t0).ln())
    }

    pub fn predict(&self, n: f64, t_b: f64) -> f64 {
        self.predict_ln(n, t_b).exp()
    }
}

/// The T_0 profiling grid: 64 log-spaced values spanning [1, 4096].
pub fn loss_t0_grid() -> Vec<f64> {
    let (lo, hi, n) = (1.0f64, 4096.0f64, 64);
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Fits the loss law to (n_params, t_b, loss) triples by profiling T_0 over
/// `loss_t0_grid` and solving the remaining log-linear system at each grid
/// point. The intercept is split evenly between the N_c and T_c constants;
/// only the product form is identifiable.
pub fn fit_loss_law(points: &[(f64, u64, f64)]) -> Result<LossLawFit> {
    let mut problems = Vec::new();
    if points.len() < 5 {
        problems.push(format!("need at least 5 points, got {}", points.len()));
    }
    for (i, &(n, _, loss)) in points.iter().enumerate() {
        if !(n > 0.0) || !n.is_finite() {
            problems.push(format!("point {i}: parameter count {n} must be positive and finite"));
        }
        if !(loss > 0.0) || !loss.is_finite() {
            problems.push(format!("point {i}: loss {loss} must be positive and finite"));
        }
    }
    let distinct_n: BTreeSet<u64> = points.iter().map(|&(n, _, _)| n.to_bits()).collect();
    let distinct_t: BTreeSet<u64> = points.iter().map(|&(_, t, _)| t).collect();
    if distinct_n.len() < 2 {
        problems.push("need at least 2 distinct parameter counts".to_string());
    }
    if distinct_t.len() < 2 {
        problems.push("need at least 2 distinct budgets".to_string());
    }
    if !problems.is_empty() {
        return Err(Error::Analysis(problems.join("; ")));
    }

    let grid = loss_t0_grid();
    let mut best: Option<(usize, [f64; 3], f64)> = None;
    for (gi, &t0) in grid.iter().enumerate() {
        let mut ata = [[0.0f64; 3]; 3];
        let mut atb = [0.0f64; 3];
        for &(n, t, loss) in points {
            let x = [-n.ln(), -((t as f64) + t0).ln(), 1.0];
            let y = loss.ln();
            for i in 0..3 {
                atb[i] += x[i] * y;
                for j in 0..3 {
                    ata[i][j] += x[i] * x[j];
                }
            }
        }
        let Ok(theta) = solve3(ata, atb) else { continue };
        let sse: f64 = points
            .iter()
            .map(|&(n, t, loss)| {
                let fitted =
                    -theta[0] * n.ln() - theta[1] * ((t as f64) + t0).ln() + theta[2];
                let r = loss.ln() - fitted;
                r * r
            })
            .sum();
        if best.map_or(true, |(_, _, best_sse)| sse < best_sse) {
            best = Some((gi, theta, sse));
        }
    }
    let Some((gi, theta, _)) = best else {
        return Err(Error::DegenerateFit(
            "loss-law system was rank deficient at every grid value of t0".to_string(),
        ));
    };

    let mut warnings = Vec::new();
    if gi == 0 || gi == grid.len() - 1 {
        warnings.push(format!(
            "t0 search stopped at the grid edge ({:.3}); the optimum may lie outside [1, 4096]",
            grid[gi]
        ));
    }
    let [mut alpha_n, mut alpha_t, c] = theta;
    if alpha_n < 0.0 {
        warnings.push(format!("alpha_n fitted negative ({alpha_n:.6}); clamped to 0"));
        alpha_n = 0.0;
    }
    if alpha_t < 0.0 {
        warnings.push(format!("alpha_t fitted negative ({alpha_t:.6}); clamped to 0"));
        alpha_t = 0.0;
    }
    const TINY: f64 = 1e-12;
    let (n_c, t_c) = match (alpha_n > TINY, alpha_t > TINY) {
        (true, true) => ((c / (2.0 * alpha_n)).exp(), (c / (2.0 * alpha_t)).exp()),
        (true, false) => ((c / alpha_n).exp(), 1.0),
        (false, true) => (1.0, (c / alpha_t).exp()),
        (false, false) => {
            if c.abs() > 1e-9 {
                warnings.push(format!(
                    "both exponents are zero but the intercept is {c:.6}; constants are meaningless"
                ));
            }
            (1.0, 1.0)
        }
    };
    Ok(LossLawFit {
        n_c,
        alpha_n,
        t_c,
        alpha_t,
        t0: grid[gi],
        warning: if warnings.is_empty() { None } else { Some(warnings.join("; ")) },
    })
}

// --- allocation policy -----------------------------------------------------------

/// A recommended budget band, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetRange {
    pub low: BudgetSpec,
    pub high: BudgetSpec,
}

impl BudgetRange {
    /// The single budget to use when a caller needs one number: the lower
    /// bound, the cheapest member of the band.
    pub fn recommended(&self) -> BudgetSpec {
        self.low
    }
}

/// Maps an externally supplied question-complexity score in [0,1] to a
/// budget band: easy questions get 64-128 tokens, middling ones 256-512,
/// hard ones 1024 and beyond.
pub fn allocate_budget(complexity: f64) -> Result<BudgetRange> {
    if !complexity.is_finite() || !(0.0..=1.0).contains(&complexity) {
        return Err(Error::Analysis(format!("complexity {complexity} outside [0,1]")));
    }
    Ok(if complexity < 0.3 {
        BudgetRange { low: BudgetSpec::tokens(64), high: BudgetSpec::tokens(128) }
    } else if complexity <= 0.7 {
        BudgetRange { low: BudgetSpec::tokens(256), high: BudgetSpec::tokens(512) }
    } else {
        BudgetRange { low: BudgetSpec::tokens(1024), high: BudgetSpec::Unlimited }
    })
}
