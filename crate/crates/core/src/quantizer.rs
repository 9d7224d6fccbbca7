//! Entropy-constrained scalar quantization.
//!
//! A quantizer minimizes `J = MSE + lambda * H`, where `H` is the entropy
//! (bits) of the cell probabilities. Design alternates three steps on the
//! training set until `J` settles:
//!
//! 1. assign every sample to the cell minimizing
//!    `(c - rep_l)^2 - lambda * log2(p_l)`;
//! 2. move each reproduction to the centroid of its samples;
//! 3. reset each probability to its cell's relative frequency.
//!
//! Each step can only lower `J`, so the objective trace is non-increasing.
//! At a fixed point the decision threshold between adjacent cells `a < b`
//! is
//!
//! ```text
//! t = (rep_a + rep_b) / 2 + lambda * (log2 p_a - log2 p_b) / (2 (rep_b - rep_a))
//! ```
//!
//! which reduces to the Lloyd-Max midpoint when `lambda = 0`. Cells that end
//! up empty are dropped, so the effective level count can shrink.
//!
//! Because the orthonormal DCT preserves squared error, the same design
//! applies unchanged to coefficients.

use serde::{Deserialize, Serialize};

use crate::coding::entropy_bits;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_XI: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Finalization steps allowed after the stopping rule fires, used only to
/// reach a partition consistent with its own decision thresholds.
const MAX_POLISH_ITER: usize = 10_000;

/// Training sets with at most this many distinct values also get an exact
/// dynamic-programming design.
pub const EXACT_MAX_DISTINCT: usize = 64;

/// A designed scalar quantizer. Cell `l` is `(boundaries[l], boundaries[l+1]]`
/// (the first cell also takes everything below, the last everything above)
/// and maps to `reproductions[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct QuantizerSpec {
    boundaries: Vec<f64>,
    reproductions: Vec<f64>,
    probabilities: Vec<f64>,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    boundaries: Vec<f64>,
    reproductions: Vec<f64>,
    probabilities: Vec<f64>,
    lambda: f64,
    levels: usize,
}

impl TryFrom<SpecRepr> for QuantizerSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        if r.levels != r.reproductions.len() {
            return Err(invalid(format!(
                "levels {} != {} reproductions",
                r.levels,
                r.reproductions.len()
            )));
        }
        QuantizerSpec::from_parts(r.boundaries, r.reproductions, r.probabilities, r.lambda)
    }
}

impl From<QuantizerSpec> for SpecRepr {
    fn from(s: QuantizerSpec) -> Self {
        let levels = s.reproductions.len();
        SpecRepr {
            boundaries: s.boundaries,
            reproductions: s.reproductions,
            probabilities: s.probabilities,
            lambda: s.lambda,
            levels,
        }
    }
}

impl QuantizerSpec {
    /// Validating constructor.
    pub fn from_parts(
        boundaries: Vec<f64>,
        reproductions: Vec<f64>,
        probabilities: Vec<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let l = reproductions.len();
        if l == 0 {
            return Err(invalid("quantizer needs at least one level"));
        }
        if boundaries.len() != l + 1 || probabilities.len() != l {
            return Err(invalid("boundary/probability counts do not match level count"));
        }
        let all_finite = boundaries.iter().chain(&reproductions).chain(&probabilities).all(|v| v.is_finite());
        if !all_finite || !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(invalid("quantizer values must be finite, lambda >= 0"));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("boundaries must be strictly increasing"));
        }
        for (i, r) in reproductions.iter().enumerate() {
            if *r < boundaries[i] || *r > boundaries[i + 1] {
                return Err(invalid(format!("reproduction {i} = {r} outside its cell")));
            }
        }
        if probabilities.iter().any(|&p| p < 0.0) {
            return Err(invalid("negative cell probability"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("cell probabilities sum to {total}")));
        }
        Ok(Self { boundaries, reproductions, probabilities, lambda })
    }

    /// Equal-width quantizer over the training range with midpoint
    /// reproductions and empirical cell probabilities (`lambda = 0`).
    pub fn uniform(training: &[f64], levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(invalid("levels must be >= 1"));
        }
        let (lo, hi) = finite_range(training)?;
        if lo == hi {
            let eps = end_margin(lo, hi);
            return Self::from_parts(vec![lo - eps, hi + eps], vec![lo], vec![1.0], 0.0);
        }
        let width = (hi - lo) / levels as f64;
        let mut boundaries: Vec<f64> = (0..=levels).map(|i| lo + width * i as f64).collect();
        boundaries[levels] = hi;
        let reproductions: Vec<f64> =
            boundaries.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let eps = end_margin(lo, hi);
        boundaries[0] -= eps;
        boundaries[levels] += eps;
        let mut counts = vec![0usize; levels];
        for &x in training {
            counts[equal_width_cell(x, lo, width, levels)] += 1;
        }
        let n = training.len() as f64;
        let probabilities = counts.iter().map(|&c| c as f64 / n).collect();
        Self::from_parts(boundaries, reproductions, probabilities, 0.0)
    }

    pub fn levels(&self) -> usize {
        self.reproductions.len()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn reproductions(&self) -> &[f64] {
        &self.reproductions
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Entropy of the cell probabilities, bits per symbol.
    pub fn rate(&self) -> f64 {
        entropy_bits(&self.probabilities)
    }

    /// Cell index (0-based) of `value`; values outside the outer boundaries
    /// clamp to the end cells. A value exactly on an interior boundary goes
    /// to the lower cell.
    pub fn quantize(&self, value: f64) -> usize {
        let interior = &self.boundaries[1..self.boundaries.len() - 1];
        interior.partition_point(|&b| b < value)
    }

    /// Penalized cost of mapping `value` to cell `l`.
    pub fn cost(&self, value: f64, l: usize) -> f64 {
        let d = value - self.reproductions[l];
        d * d + penalty(self.lambda, self.probabilities[l])
    }

    /// Reference implementation of [`QuantizerSpec::quantize`] by scanning
    /// every cell; ties go to the lower index.
    pub fn quantize_exhaustive(&self, value: f64) -> usize {
        let mut best = 0;
        let mut best_cost = self.cost(value, 0);
        for l in 1..self.levels() {
            let c = self.cost(value, l);
            if c < best_cost {
                best = l;
                best_cost = c;
            }
        }
        best
    }

    pub fn dequantize(&self, index: usize) -> Result<f64> {
        self.reproductions.get(index).copied().ok_or(Error::Range { index, len: self.levels() })
    }

    /// Mean squared quantization error over `values`.
    pub fn mse(&self, values: &[f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        values
            .iter()
            .map(|&v| (v - self.reproductions[self.quantize(v)]).powi(2))
            .sum::<f64>()
            / values.len() as f64
    }
}

fn penalty(lambda: f64, p: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else if p > 0.0 {
        -lambda * p.log2()
    } else {
        f64::INFINITY
    }
}

fn finite_range(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InsufficientData("no training values".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(invalid("training values must be finite"));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

fn end_margin(lo: f64, hi: f64) -> f64 {
    if hi > lo {
        1e-9 * (hi - lo)
    } else {
        1e-9 * lo.abs().max(1.0)
    }
}

fn equal_width_cell(x: f64, lo: f64, width: f64, levels: usize) -> usize {
    if width <= 0.0 {
        return 0;
    }
    (((x - lo) / width).floor().max(0.0) as usize).min(levels - 1)
}

/// Result of [`design_ecsq`].
#[derive(Debug, Clone)]
pub struct EcsqDesign {
    pub spec: QuantizerSpec,
    /// Objective after initialization and after every iteration.
    pub trace: Vec<f64>,
    /// Iterations run before the stopping rule fired (or `max_iter`).
    pub iterations: usize,
    /// Whether the relative-change rule fired within `max_iter`.
    pub converged: bool,
    /// Extra descent steps taken afterwards to reach a self-consistent
    /// partition; also recorded in `trace`.
    pub polish_iterations: usize,
    /// Whether the exact small-alphabet partition replaced the descent result.
    pub exact: bool,
    /// Training mean squared error of the final quantizer.
    pub distortion: f64,
}

impl EcsqDesign {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

/// Partition of sorted training data into contiguous, value-disjoint cells.
struct Partition<'a> {
    xs: &'a [f64],
    // exclusive end index of each cell in `xs`
    ends: Vec<usize>,
    reps: Vec<f64>,
    probs: Vec<f64>,
}

impl<'a> Partition<'a> {
    fn from_ends(xs: &'a [f64], ends: Vec<usize>) -> Self {
        let mut p = Partition { xs, ends, reps: Vec::new(), probs: Vec::new() };
        p.update();
        p
    }

    fn cells(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let starts = std::iter::once(0).chain(self.ends.iter().copied());
        starts.zip(self.ends.iter().copied()).map(move |(s, e)| &self.xs[s..e])
    }

    /// Centroids and frequencies for the current cells; drops empty cells.
    fn update(&mut self) {
        let mut ends = Vec::with_capacity(self.ends.len());
        let mut prev = 0;
        for &e in &self.ends {
            if e > prev {
                ends.push(e);
            }
            prev = e;
        }
        self.ends = ends;
        let n = self.xs.len() as f64;
        self.reps = self.cells().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        self.probs = self.cells().map(|c| c.len() as f64 / n).collect();
    }

    fn distortion(&self) -> f64 {
        let total: f64 = self
            .cells()
            .zip(&self.reps)
            .map(|(c, &r)| c.iter().map(|&x| (x - r) * (x - r)).sum::<f64>())
            .sum();
        total / self.xs.len() as f64
    }

    fn objective(&self, lambda: f64) -> f64 {
        let d = self.distortion();
        if lambda == 0.0 {
            d
        } else {
            d + lambda * entropy_bits(&self.probs)
        }
    }

    fn threshold(&self, a: usize, b: usize, lambda: f64) -> f64 {
        let (ra, rb) = (self.reps[a], self.reps[b]);
        let mid = 0.5 * (ra + rb);
        if lambda == 0.0 {
            mid
        } else {
            mid + lambda * (self.probs[a].log2() - self.probs[b].log2()) / (2.0 * (rb - ra))
        }
    }

    /// Lower envelope of the per-cell cost parabolas: surviving cells in
    /// increasing order and the thresholds between consecutive survivors.
    fn envelope(&self, lambda: f64) -> (Vec<usize>, Vec<f64>) {
        let mut hull: Vec<usize> = Vec::with_capacity(self.reps.len());
        let mut cuts: Vec<f64> = Vec::with_capacity(self.reps.len());
        for k in 0..self.reps.len() {
            while let Some(&top) = hull.last() {
                let t = self.threshold(top, k, lambda);
                match cuts.last() {
                    Some(&prev) if t <= prev => {
                        hull.pop();
                        cuts.pop();
                    }
                    _ => break,
                }
            }
            if let Some(&top) = hull.last() {
                cuts.push(self.threshold(top, k, lambda));
            }
            hull.push(k);
        }
        (hull, cuts)
    }

    /// Cell ends after reassigning every sample to its cheapest cell.
    fn assign(&self, lambda: f64) -> Vec<usize> {
        let (_, cuts) = self.envelope(lambda);
        let mut ends = Vec::with_capacity(cuts.len() + 1);
        let mut i = 0;
        for &t in &cuts {
            i += self.xs[i..].partition_point(|&x| x <= t);
            ends.push(i);
        }
        ends.push(self.xs.len());
        ends
    }

    fn into_spec(self, lambda: f64) -> Result<QuantizerSpec> {
        let (hull, cuts) = self.envelope(lambda);
        if hull.len() != self.reps.len() {
            return Err(invalid("internal: partition is not self-consistent"));
        }
        let lo = self.xs[0];
        let hi = self.xs[self.xs.len() - 1];
        let eps = end_margin(lo, hi);
        let mut boundaries = Vec::with_capacity(cuts.len() + 2);
        boundaries.push(lo - eps);
        boundaries.extend(cuts);
        boundaries.push(hi + eps);
        let total: f64 = self.probs.iter().sum();
        let probs = self.probs.iter().map(|p| p / total).collect();
        QuantizerSpec::from_parts(boundaries, self.reps, probs, lambda)
    }
}

/// Design an entropy-constrained scalar quantizer with `levels` initial
/// equal-width cells over the training range.
///
/// Stops when `|J_i - J_{i-1}| / J_i < xi`, when the partition stops
/// changing, or after `max_iter` iterations.
pub fn design_ecsq(
    training: &[f64],
    levels: usize,
    lambda: f64,
    xi: f64,
    max_iter: usize,
) -> Result<EcsqDesign> {
    if levels == 0 {
        return Err(invalid("levels must be >= 1"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda {lambda} must be finite and >= 0")));
    }
    if xi.is_nan() || xi <= 0.0 {
        return Err(invalid(format!("xi {xi} must be > 0")));
    }
    if training.len() < 10 * levels {
        return Err(Error::InsufficientData(format!(
            "{} training values for {levels} levels (need {})",
            training.len(),
            10 * levels
        )));
    }
    let (lo, hi) = finite_range(training)?;
    let mut xs = training.to_vec();
    xs.sort_by(f64::total_cmp);

    let width = (hi - lo) / levels as f64;
    let mut ends = vec![0usize; levels];
    for (i, &x) in xs.iter().enumerate() {
        ends[equal_width_cell(x, lo, width, levels)] = i + 1;
    }
    // carry ends forward over cells that received nothing
    for l in 1..levels {
        ends[l] = ends[l].max(ends[l - 1]);
    }
    let mut part = Partition::from_ends(&xs, ends);

    let mut trace = vec![part.objective(lambda)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let ends = part.assign(lambda);
        let unchanged = ends == part.ends;
        if !unchanged {
            part.ends = ends;
            part.update();
        }
        let j = part.objective(lambda);
        let prev = *trace.last().expect("trace is never empty");
        trace.push(j);
        if unchanged || relative_change(j, prev) < xi {
            converged = true;
            break;
        }
    }

    let mut polish_iterations = polish(&mut part, lambda, &mut trace)?;

    // descent can stall in a local minimum; on small alphabets the global
    // optimum is cheap to find, and is taken only if it lowers J
    let mut exact = false;
    if let Some(ends) = exact_partition(&xs, levels, lambda) {
        let candidate = Partition::from_ends(&xs, ends);
        let j = candidate.objective(lambda);
        let current = *trace.last().expect("trace is never empty");
        if j < current - 1e-12 * current.abs().max(1.0) {
            part = candidate;
            trace.push(j);
            exact = true;
            polish_iterations += polish(&mut part, lambda, &mut trace)?;
        }
    }

    let distortion = part.distortion();
    let spec = part.into_spec(lambda)?;
    Ok(EcsqDesign { spec, trace, iterations, converged, polish_iterations, exact, distortion })
}

/// Reassign until the partition is a fixed point; returns the step count.
fn polish(part: &mut Partition<'_>, lambda: f64, trace: &mut Vec<f64>) -> Result<usize> {
    let mut steps = 0;
    loop {
        let ends = part.assign(lambda);
        if ends == part.ends {
            return Ok(steps);
        }
        if steps == MAX_POLISH_ITER {
            return Err(invalid("quantizer design did not reach a consistent partition"));
        }
        steps += 1;
        part.ends = ends;
        part.update();
        trace.push(part.objective(lambda));
    }
}

/// Globally optimal split of sorted `xs` into at most `levels` contiguous
/// cells, by dynamic programming over distinct values. `None` when there are
/// more than [`EXACT_MAX_DISTINCT`] distinct values.
fn exact_partition(xs: &[f64], levels: usize, lambda: f64) -> Option<Vec<usize>> {
    let mut values: Vec<f64> = Vec::new();
    let mut ends: Vec<usize> = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        if values.last() == Some(&x) {
            *ends.last_mut().unwrap() = i + 1;
        } else {
            if values.len() == EXACT_MAX_DISTINCT {
                return None;
            }
            values.push(x);
            ends.push(i + 1);
        }
    }
    let m = values.len();
    let n = xs.len() as f64;
    let start = |a: usize| if a == 0 { 0 } else { ends[a - 1] };
    // cost[a][b]: cell holding distinct values a..b
    let mut cost = vec![vec![f64::INFINITY; m + 1]; m + 1];
    for a in 0..m {
        for b in a + 1..=m {
            let cell = &xs[start(a)..ends[b - 1]];
            let mean = cell.iter().sum::<f64>() / cell.len() as f64;
            let sse: f64 = cell.iter().map(|&x| (x - mean) * (x - mean)).sum();
            let p = cell.len() as f64 / n;
            cost[a][b] = sse / n - lambda * p * p.log2();
        }
    }
    let k_max = levels.min(m);
    // best[k][b]: first b distinct values in k cells
    let mut best = vec![vec![f64::INFINITY; m + 1]; k_max + 1];
    let mut from = vec![vec![0usize; m + 1]; k_max + 1];
    best[0][0] = 0.0;
    for k in 1..=k_max {
        for b in k..=m {
            for a in k - 1..b {
                let c = best[k - 1][a] + cost[a][b];
                if c < best[k][b] {
                    best[k][b] = c;
                    from[k][b] = a;
                }
            }
        }
    }
    let mut k = (1..=k_max).min_by(|&i, &j| best[i][m].total_cmp(&best[j][m]))?;
    let mut cuts = Vec::with_capacity(k);
    let mut b = m;
    while k > 0 {
        cuts.push(ends[b - 1]);
        b = from[k][b];
        k -= 1;
    }
    cuts.reverse();
    Some(cuts)
}

fn relative_change(j: f64, prev: f64) -> f64 {
    if j == 0.0 {
        if prev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (j - prev).abs() / j
    }
}

/// One designed operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub rate_bits_per_symbol: f64,
    pub distortion: f64,
    pub levels: usize,
    pub initial_levels: usize,
    pub lambda: f64,
    pub spec: QuantizerSpec,
}

/// A family of designed quantizers and the lower convex hull of their
/// (rate, distortion) points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    points: Vec<RdPoint>,
    hull: Vec<usize>,
}

impl RdCurve {
    pub fn from_points(points: Vec<RdPoint>) -> Self {
        let hull = lower_hull(&points);
        Self { points, hull }
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    /// Hull points in increasing rate (and strictly decreasing distortion).
    pub fn hull(&self) -> impl Iterator<Item = &RdPoint> + '_ {
        self.hull.iter().map(move |&i| &self.points[i])
    }

    pub fn hull_indices(&self) -> &[usize] {
        &self.hull
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn lower_hull(points: &[RdPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pa.rate_bits_per_symbol
            .total_cmp(&pb.rate_bits_per_symbol)
            .then(pa.distortion.total_cmp(&pb.distortion))
            .then(pa.levels.cmp(&pb.levels))
    });
    let same = |a: &RdPoint, b: &RdPoint| {
        (a.rate_bits_per_symbol - b.rate_bits_per_symbol).abs() <= 1e-12
            && (a.distortion - b.distortion).abs() <= 1e-12 * a.distortion.abs().max(1.0)
    };
    let mut hull: Vec<usize> = Vec::new();
    for &i in &order {
        let p = &points[i];
        if let Some(&last) = hull.last() {
            let q = &points[last];
            // equal rate: the first (lowest distortion) already holds the slot
            if same(p, q) || (p.rate_bits_per_symbol - q.rate_bits_per_symbol).abs() <= 1e-12 {
                continue;
            }
        }
        while hull.len() >= 2 {
            let a = &points[hull[hull.len() - 2]];
            let b = &points[hull[hull.len() - 1]];
            let cross = (b.rate_bits_per_symbol - a.rate_bits_per_symbol) * (p.distortion - a.distortion)
                - (b.distortion - a.distortion) * (p.rate_bits_per_symbol - a.rate_bits_per_symbol);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    // keep only the strictly decreasing part
    let mut end = 1.min(hull.len());
    while end < hull.len() && points[hull[end]].distortion < points[hull[end - 1]].distortion {
        end += 1;
    }
    hull.truncate(end);
    hull
}

/// Default Lagrange multipliers: one per decade over `[1e-6, 1e2] * variance`.
pub fn default_lambda_grid(variance: f64) -> Vec<f64> {
    (-6..=2).map(|e| 10f64.powi(e) * variance).collect()
}

/// Design one quantizer per `(levels, lambda)` pair. Level counts that the
/// training set cannot support (fewer than ten samples per level) are
/// skipped.
pub fn rd_sweep(
    training: &[f64],
    levels_list: &[usize],
    lambda_grid: &[f64],
    xi: f64,
) -> Result<RdCurve> {
    if levels_list.is_empty() || lambda_grid.is_empty() {
        return Err(invalid("rd sweep needs at least one level count and one lambda"));
    }
    let usable: Vec<usize> = levels_list.iter().copied().filter(|&l| l >= 1 && 10 * l <= training.len()).collect();
    if usable.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} training values support none of the requested level counts",
            training.len()
        )));
    }
    let mut points = Vec::with_capacity(usable.len() * lambda_grid.len());
    for &l in &usable {
        for &lambda in lambda_grid {
            let d = design_ecsq(training, l, lambda, xi, DEFAULT_MAX_ITER)?;
            points.push(RdPoint {
                rate_bits_per_symbol: d.spec.rate(),
                distortion: d.distortion,
                levels: d.spec.levels(),
                initial_levels: l,
                lambda,
                spec: d.spec,
            });
            if l == 1 {
                break;
            }
        }
    }
    Ok(RdCurve::from_points(points))
}

/// The hull point with the largest rate not exceeding `rate_budget`.
pub fn pick_operating_point(curve: &RdCurve, rate_budget: f64) -> Result<&RdPoint> {
    if curve.is_empty() {
        return Err(Error::InsufficientData("empty rd curve".into()));
    }
    curve
        .hull()
        .filter(|p| p.rate_bits_per_symbol <= rate_budget + 1e-12)
        .last()
        .ok_or_else(|| invalid(format!("no operating point within {rate_budget} bits/symbol")))
}
