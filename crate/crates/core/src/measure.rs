//! Finite measures on `[0, 1]` and the merger rates they induce.
//!
//! A [`LambdaMeasure`] is an atom at zero (the Kingman part) plus an optional
//! absolutely continuous part on `(0, 1]`. Atoms inside `(0, 1]` cannot be
//! expressed, so in particular the measure never charges `{1}`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};

/// Absolutely continuous part of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Density {
    None,
    /// Beta(2 - beta, beta) probability density, `beta` in (1, 2).
    Beta { beta: f64 },
    /// Piecewise linear density through the knots, flat below the first knot
    /// and zero above the last one.
    Table { knots: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaMeasure {
    kingman_mass: f64,
    density: Density,
    density_weight: f64,
    total_mass: f64,
}

/// All merger rates out of `b` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MergerRateTable {
    pub b: u64,
    /// `rates[k - 2]` is the rate at which one given k-tuple merges.
    pub rates: Vec<f64>,
    pub lambda_total: f64,
    pub gamma: f64,
}

impl MergerRateTable {
    pub fn rate(&self, k: u64) -> f64 {
        self.rates[(k - 2) as usize]
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub(crate) fn ln_choose(n: u64, k: u64) -> f64 {
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Binomial coefficient as a float; exact products up to b = 1000, log-gamma beyond.
pub(crate) fn choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    if n <= 1000 {
        let mut c = 1.0f64;
        for i in 0..k {
            c = c * (n - i) as f64 / (i + 1) as f64;
        }
        c.round()
    } else {
        ln_choose(n, k).exp()
    }
}

pub(crate) fn choose2(b: u64) -> f64 {
    b as f64 * (b as f64 - 1.0) / 2.0
}

/// `e^{-y} - 1 + y` without cancellation for small `y >= 0`.
pub fn phi(y: f64) -> f64 {
    if y < 1e-2 {
        // alternating series, terms shrink by at least 100x
        let mut term = y * y / 2.0;
        let mut sum = 0.0f64;
        let mut k = 2.0;
        while term.abs() > 1e-18 * sum.abs().max(f64::MIN_POSITIVE) {
            sum += term;
            k += 1.0;
            term *= -y / k;
        }
        sum
    } else {
        y + (-y).exp_m1()
    }
}

/// `x + ln(1 - x)` for `x` in `[0, 1)`.
fn x_plus_log1m(x: f64) -> f64 {
    if x < 1e-2 {
        let mut pow = x * x;
        let mut sum = 0.0f64;
        let mut k = 2.0;
        while pow / k > 1e-18 * sum.abs().max(f64::MIN_POSITIVE) {
            sum -= pow / k;
            pow *= x;
            k += 1.0;
        }
        sum
    } else {
        x + (-x).ln_1p()
    }
}

/// Probability that a Binomial(b, x) variable is at least 2.
pub fn prob_at_least_two(b: u64, x: f64) -> f64 {
    if b < 2 || x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let bf = b as f64;
    if bf * x < 2.0 {
        let odds = x / (1.0 - x);
        let mut term = (choose2(b).ln() + 2.0 * x.ln() + (bf - 2.0) * (-x).ln_1p()).exp();
        let mut sum = 0.0;
        let mut k = 2u64;
        while k <= b && term > 1e-18 * sum {
            sum += term;
            term *= (bf - k as f64) / (k as f64 + 1.0) * odds;
            k += 1;
        }
        sum
    } else {
        let p0 = (bf * (-x).ln_1p()).exp();
        let p1 = bf * x / (1.0 - x) * p0;
        (1.0 - p0 - p1).max(0.0)
    }
}

/// `n x - 1 + (1 - x)^n`, the expected number of blocks lost when each of `n`
/// blocks joins a merger independently with probability `x`.
pub fn blocks_lost(n: u64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return n as f64 - 1.0;
    }
    let nf = n as f64;
    let l = nf * (-x).ln_1p();
    nf * x_plus_log1m(x) + phi(-l)
}

/// Geometric breakpoints `scale * 10^j` inside `(lo, 1)`.
pub(crate) fn decade_breaks(scale: f64, lo: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut x = scale * 0.1;
    while x < 1.0 {
        if x > lo {
            out.push(x);
        }
        x *= 10.0;
    }
    out
}

impl LambdaMeasure {
    pub fn kingman(mass: f64) -> Result<Self> {
        Self::new(mass, Density::None)
    }

    pub fn beta(beta: f64) -> Result<Self> {
        Self::new(0.0, Density::Beta { beta })
    }

    pub fn mix(mass: f64, beta: f64) -> Result<Self> {
        Self::new(mass, Density::Beta { beta })
    }

    pub fn table(knots: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(0.0, Density::Table { knots })
    }

    pub fn new(kingman_mass: f64, density: Density) -> Result<Self> {
        if !(kingman_mass.is_finite() && kingman_mass >= 0.0) {
            return Err(Error::InvalidMeasure(format!(
                "Kingman mass must be finite and nonnegative, got {kingman_mass}"
            )));
        }
        let density_mass = match &density {
            Density::None => 0.0,
            Density::Beta { beta } => {
                if !(*beta > 1.0 && *beta < 2.0) {
                    return Err(Error::InvalidMeasure(format!(
                        "beta parameter must lie in (1, 2), got {beta}"
                    )));
                }
                1.0
            }
            Density::Table { knots } => table_mass(knots)?,
        };
        Ok(LambdaMeasure {
            kingman_mass,
            density,
            density_weight: 1.0,
            total_mass: kingman_mass + density_mass,
        })
    }

    /// Parse `kingman:<mass>`, `beta:<b>`, `mix:<mass>+beta:<b>` or
    /// `table:<path.csv>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidMeasure(format!("cannot parse measure spec '{spec}'"));
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        let (kind, rest) = spec.split_once(':').ok_or_else(bad)?;
        match kind.trim() {
            "kingman" => Self::kingman(num(rest)?),
            "beta" => Self::beta(num(rest)?),
            "mix" => {
                let (mass, beta) = rest.split_once('+').ok_or_else(bad)?;
                let beta = beta.trim().strip_prefix("beta:").ok_or_else(bad)?;
                Self::mix(num(mass)?, num(beta)?)
            }
            "table" => Self::table(read_table(Path::new(rest.trim()))?),
            _ => Err(bad()),
        }
    }

    /// The same measure multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {c}")));
        }
        Ok(LambdaMeasure {
            kingman_mass: self.kingman_mass * c,
            density: self.density.clone(),
            density_weight: self.density_weight * c,
            total_mass: self.total_mass * c,
        })
    }

    pub fn kingman_mass(&self) -> f64 {
        self.kingman_mass
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    pub fn has_density(&self) -> bool {
        !matches!(self.density, Density::None)
    }

    /// `Lambda([0, 1])`.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Exponent beta governing the modulus constants: 2 whenever there is a
    /// Kingman component, the Beta parameter otherwise.
    pub fn modulus_beta(&self) -> Option<f64> {
        if self.kingman_mass > 0.0 {
            return Some(2.0);
        }
        match self.density {
            Density::Beta { beta } => Some(beta),
            _ => None,
        }
    }

    /// Density of the absolutely continuous part at `x` in `(0, 1]`.
    pub fn density_at(&self, x: f64) -> f64 {
        if !(x > 0.0 && x <= 1.0) {
            return 0.0;
        }
        self.density_weight
            * match &self.density {
                Density::None => 0.0,
                Density::Beta { beta } => {
                    let beta = *beta;
                    ((1.0 - beta) * x.ln() + (beta - 1.0) * (-x).ln_1p() - ln_beta(2.0 - beta, beta)).exp()
                }
                Density::Table { knots } => table_eval(knots, x),
            }
    }

    /// Envelope `M x^{-a}` dominating the density on `(0, 1]`, as `(M, a)`.
    pub(crate) fn density_envelope(&self) -> Option<(f64, f64)> {
        match &self.density {
            Density::None => None,
            Density::Beta { beta } => Some((
                self.density_weight * (-ln_beta(2.0 - beta, *beta)).exp(),
                beta - 1.0,
            )),
            Density::Table { knots } => {
                let max = knots.iter().map(|k| k.1).fold(0.0, f64::max);
                if max > 0.0 {
                    Some((self.density_weight * max, 0.0))
                } else {
                    None
                }
            }
        }
    }

    /// `int_0^1 g(x) f(x) dx` for the density part `f`. `breaks` are extra
    /// points in `(0, 1)` where `g` changes character.
    pub fn integrate_density<G: Fn(f64) -> f64>(&self, g: G, breaks: &[f64], tol: Tolerance) -> f64 {
        match &self.density {
            Density::None => 0.0,
            Density::Beta { beta } => self.density_weight * integrate_beta(*beta, &g, breaks, tol),
            Density::Table { knots } => {
                let mut pts: Vec<f64> = vec![0.0];
                pts.extend(knots.iter().map(|k| k.0));
                pts.extend(breaks.iter().copied().filter(|&x| x > 0.0 && x < 1.0));
                pts.sort_by(f64::total_cmp);
                pts.dedup();
                let last = knots.last().map(|k| k.0).unwrap_or(0.0);
                pts.retain(|&x| x <= last);
                let w = self.density_weight;
                w * quad::integrate_with_breaks(|x| g(x) * table_eval(knots, x), &pts, tol).value
            }
        }
    }

    fn check_bk(b: u64, k: u64) -> Result<()> {
        if k < 2 || k > b {
            return Err(Error::InvalidArgument(format!(
                "merger size k={k} must satisfy 2 <= k <= b={b}"
            )));
        }
        Ok(())
    }

    /// Rate at which one particular k-tuple out of `b` blocks merges.
    pub fn lambda_bk(&self, b: u64, k: u64) -> Result<f64> {
        Self::check_bk(b, k)?;
        let atom = if k == 2 { self.kingman_mass } else { 0.0 };
        let dens = match &self.density {
            Density::None => 0.0,
            Density::Beta { beta } => self.density_weight * beta_closed_form(*beta, b, k),
            Density::Table { .. } => self.lambda_bk_quadrature_density(b, k),
        };
        Ok(atom + dens)
    }

    /// Same as [`lambda_bk`](Self::lambda_bk) but the density part always goes
    /// through quadrature, including for the Beta family.
    pub fn lambda_bk_quadrature(&self, b: u64, k: u64) -> Result<f64> {
        Self::check_bk(b, k)?;
        let atom = if k == 2 { self.kingman_mass } else { 0.0 };
        Ok(atom + self.lambda_bk_quadrature_density(b, k))
    }

    fn lambda_bk_quadrature_density(&self, b: u64, k: u64) -> f64 {
        let (km2, bmk) = ((k - 2) as i32, (b - k) as f64);
        let g = move |x: f64| x.powi(km2) * (bmk * (-x).ln_1p()).exp();
        let breaks = decade_breaks(1.0 / b as f64, 0.0);
        self.integrate_density(g, &breaks, Tolerance::rel(1e-13))
    }

    /// `lambda_b`, the total merger rate out of `b` blocks, from the integral
    /// `int P(Bin(b, x) >= 2) x^{-2} Lambda(dx)`.
    pub fn total_rate(&self, b: u64) -> f64 {
        let g = |x: f64| {
            if x * b as f64 <= 1e-150 {
                choose2(b)
            } else {
                prob_at_least_two(b, x) / (x * x)
            }
        };
        self.kingman_mass * choose2(b)
            + self.integrate_density(g, &decade_breaks(1.0 / b as f64, 0.0), Tolerance::rel(1e-12))
    }

    /// `gamma_b`, the rate at which the number of blocks decreases.
    pub fn gamma_rate(&self, b: u64) -> f64 {
        let g = |x: f64| {
            if x * b as f64 <= 1e-150 {
                choose2(b)
            } else {
                blocks_lost(b, x) / (x * x)
            }
        };
        self.kingman_mass * choose2(b)
            + self.integrate_density(g, &decade_breaks(1.0 / b as f64, 0.0), Tolerance::rel(1e-12))
    }

    /// Every `lambda_{b,k}` together with `lambda_b` and `gamma_b`.
    pub fn rate_table(&self, b: u64) -> Result<MergerRateTable> {
        if b < 2 {
            return Err(Error::InvalidArgument(format!("rate table needs b >= 2, got {b}")));
        }
        let mut rates = Vec::with_capacity(b as usize - 1);
        let mut lambda_total = 0.0;
        let mut gamma = 0.0;
        for k in 2..=b {
            let rate = self.lambda_bk(b, k)?;
            let weighted = if rate <= 0.0 {
                0.0
            } else if b <= 1000 {
                choose(b, k) * rate
            } else {
                (ln_choose(b, k) + rate.ln()).exp()
            };
            lambda_total += weighted;
            gamma += (k - 1) as f64 * weighted;
            rates.push(rate);
        }
        Ok(MergerRateTable {
            b,
            rates,
            lambda_total,
            gamma,
        })
    }

    /// Short text label, reusable as a measure spec where possible.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for LambdaMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.density_weight;
        match (&self.density, self.kingman_mass > 0.0) {
            (Density::None, _) => write!(f, "kingman:{}", self.kingman_mass),
            (Density::Beta { beta }, false) if w == 1.0 => write!(f, "beta:{beta}"),
            (Density::Beta { beta }, true) if w == 1.0 => write!(f, "mix:{}+beta:{beta}", self.kingman_mass),
            (Density::Beta { beta }, _) => write!(f, "mix:{}+{w}*beta:{beta}", self.kingman_mass),
            (Density::Table { knots }, _) => write!(
                f,
                "table[{} knots, mass {}]+kingman:{}",
                knots.len(),
                self.total_mass - self.kingman_mass,
                self.kingman_mass
            ),
        }
    }
}

/// `B(k - beta, b - k + beta) / B(2 - beta, beta)`.
fn beta_closed_form(beta: f64, b: u64, k: u64) -> f64 {
    (ln_beta(k as f64 - beta, (b - k) as f64 + beta) - ln_beta(2.0 - beta, beta)).exp()
}

/// `int_0^1 g(x) x^{1-beta}(1-x)^{beta-1} dx / B(2-beta, beta)`.
///
/// On `[0, 1/2]` substitute `x = y^{1/(2-beta)}` and on `[1/2, 1]`
/// substitute `1 - x = z^{1/beta}`; both remove the algebraic endpoint
/// factor, leaving a bounded integrand.
fn integrate_beta<G: Fn(f64) -> f64>(beta: f64, g: &G, breaks: &[f64], tol: Tolerance) -> f64 {
    let norm = (-ln_beta(2.0 - beta, beta)).exp();
    let p = 1.0 / (2.0 - beta);
    let q = 1.0 / beta;

    let mut left = vec![0.0];
    left.extend(breaks.iter().filter(|&&x| x > 0.0 && x < 0.5).map(|&x| x.powf(2.0 - beta)));
    left.push(0.5f64.powf(2.0 - beta));
    left.sort_by(f64::total_cmp);

    let mut right = vec![0.0];
    right.extend(breaks.iter().filter(|&&x| x > 0.5 && x < 1.0).map(|&x| (1.0 - x).powf(beta)));
    right.push(0.5f64.powf(beta));
    right.sort_by(f64::total_cmp);

    let lower = quad::integrate_with_breaks(
        |y: f64| {
            let x = y.powf(p);
            (1.0 - x).powf(beta - 1.0) * g(x)
        },
        &left,
        tol,
    );
    let upper = quad::integrate_with_breaks(
        |z: f64| {
            let x = 1.0 - z.powf(q);
            x.powf(1.0 - beta) * g(x)
        },
        &right,
        tol,
    );
    norm * (p * lower.value + q * upper.value)
}

fn table_eval(knots: &[(f64, f64)], x: f64) -> f64 {
    let Some(&(x0, f0)) = knots.first() else { return 0.0 };
    if x <= x0 {
        return f0;
    }
    let idx = knots.partition_point(|k| k.0 < x);
    if idx >= knots.len() {
        return 0.0;
    }
    let (xa, fa) = knots[idx - 1];
    let (xb, fb) = knots[idx];
    fa + (fb - fa) * (x - xa) / (xb - xa)
}

fn table_mass(knots: &[(f64, f64)]) -> Result<f64> {
    if knots.is_empty() {
        return Err(Error::InvalidMeasure("density table has no knots".into()));
    }
    for w in knots.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::InvalidMeasure("density table x values must be strictly increasing".into()));
        }
    }
    for &(x, f) in knots {
        if !(x > 0.0 && x <= 1.0) {
            return Err(Error::InvalidMeasure(format!("density table x={x} outside (0, 1]")));
        }
        if !(f.is_finite() && f >= 0.0) {
            return Err(Error::InvalidMeasure(format!(
                "density table value {f} at x={x} is not finite and nonnegative"
            )));
        }
    }
    let head = knots[0].0 * knots[0].1;
    let body: f64 = knots.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    let mass = head + body;
    if !mass.is_finite() {
        return Err(Error::InvalidMeasure("density table is not normalizable".into()));
    }
    Ok(mass)
}

/// Read a `x,density` CSV.
pub fn read_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::parse(path, e.to_string()))?;
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "density" {
        return Err(Error::parse(path, "expected header 'x,density'"));
    }
    let mut knots = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let field = |i: usize| {
            record[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(path, format!("row {}: bad number '{}'", line + 2, &record[i])))
        };
        knots.push((field(0)?, field(1)?));
    }
    Ok(knots)
}

/// One row of the Condition A diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionARow {
    pub m: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionADiagnostic {
    pub rows: Vec<ConditionARow>,
    /// Power-law estimate of the omitted tail beyond `b_max` is above 1% of
    /// the partial sum at `m_max`.
    pub tail_truncated: bool,
    /// Values are non-increasing (0.1% slack) over the last half of the range.
    pub plausibly_bounded: bool,
}

/// Tabulate `m^{beta-1} * sum_{b=m+1}^{b_max} 1/lambda_b` for `m = 1..=m_max`.
pub fn check_condition_a(
    measure: &LambdaMeasure,
    beta_hyp: f64,
    m_max: u64,
    b_max: u64,
) -> Result<ConditionADiagnostic> {
    if !(beta_hyp > 1.0) {
        return Err(Error::InvalidArgument(format!("beta must exceed 1, got {beta_hyp}")));
    }
    if m_max < 1 || b_max < 10 * m_max {
        return Err(Error::InvalidArgument(format!(
            "need m_max >= 1 and b_max >= 10 m_max (m_max={m_max}, b_max={b_max})"
        )));
    }
    let inv: Vec<f64> = (2..=b_max).map(|b| 1.0 / measure.total_rate(b)).collect();
    // suffix[i] = sum of inv[i..]
    let mut suffix = vec![0.0; inv.len() + 1];
    for i in (0..inv.len()).rev() {
        suffix[i] = suffix[i + 1] + inv[i];
    }
    let rows: Vec<ConditionARow> = (1..=m_max)
        .map(|m| {
            // terms b = m+1 ..= b_max start at index m - 1
            let sum = suffix[(m - 1) as usize];
            ConditionARow {
                m,
                value: (m as f64).powf(beta_hyp - 1.0) * sum,
            }
        })
        .collect();

    let last = inv[inv.len() - 1];
    let prev = inv[inv.len() / 10];
    let span = (b_max as f64 / ((inv.len() / 10) as f64 + 2.0)).ln();
    let decay = (prev / last).ln() / span;
    let tail = if decay > 1.0 {
        last * b_max as f64 / (decay - 1.0)
    } else {
        f64::INFINITY
    };
    let tail_truncated = tail > 0.01 * suffix[(m_max - 1) as usize];

    let half = rows.len() / 2;
    let plausibly_bounded = rows[half..].windows(2).all(|w| w[1].value <= w[0].value * (1.0 + 1e-3));
    Ok(ConditionADiagnostic {
        rows,
        tail_truncated,
        plausibly_bounded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityBoundCheck {
    pub lower_holds: bool,
    pub upper_holds: bool,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `min_ratio` when the lower bound fails, else `max_ratio`.
    pub worst_ratio: f64,
    /// Set when the verdict is forced by the shape of the measure rather than
    /// by the grid (no density part, or an atom at zero).
    pub note: Option<String>,
}

/// Compare the density with `A x^{1-beta}` on a geometric grid over `(0, eps]`
/// spanning eight decades.
pub fn check_density_bounds(
    measure: &LambdaMeasure,
    beta_hyp: f64,
    a: f64,
    eps: f64,
    grid: usize,
) -> Result<DensityBoundCheck> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps must be in (0, 1), got {eps}")));
    }
    if grid < 10 {
        return Err(Error::InvalidArgument(format!("grid must have at least 10 points, got {grid}")));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("A must be positive, got {a}")));
    }
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    for i in 0..grid {
        let x = eps * 10f64.powf(-8.0 * i as f64 / (grid - 1) as f64);
        let ratio = measure.density_at(x) / (a * x.powf(1.0 - beta_hyp));
        min_ratio = min_ratio.min(ratio);
        max_ratio = max_ratio.max(ratio);
    }
    let slack = 1e-12;
    let mut lower_holds = min_ratio >= 1.0 - slack;
    let mut upper_holds = max_ratio <= 1.0 + slack;
    let mut note = None;
    if !measure.has_density() {
        lower_holds = false;
        note = Some("no density part: the lower density bound fails by convention".to_string());
    }
    if measure.kingman_mass() > 0.0 {
        upper_holds = false;
        note.get_or_insert_with(|| "atom at zero exceeds any density bound".to_string());
    }
    let worst_ratio = if lower_holds { max_ratio } else { min_ratio };
    Ok(DensityBoundCheck {
        lower_holds,
        upper_holds,
        min_ratio,
        max_ratio,
        worst_ratio,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn uniform() -> LambdaMeasure {
        LambdaMeasure::table(vec![(0.5, 1.0), (1.0, 1.0)]).unwrap()
    }

    #[test]
    fn kingman_rates_are_the_atom() {
        let m = LambdaMeasure::kingman(1.0).unwrap();
        assert_eq!(m.lambda_bk(5, 2).unwrap(), 1.0);
        assert_eq!(m.lambda_bk(5, 3).unwrap(), 0.0);
        let t = m.rate_table(4).unwrap();
        assert_relative_eq!(t.lambda_total, 6.0, max_relative = 1e-14);
        assert_relative_eq!(t.gamma, 6.0, max_relative = 1e-14);
        let t = LambdaMeasure::kingman(2.0).unwrap().rate_table(10).unwrap();
        assert_relative_eq!(t.lambda_total, 90.0, max_relative = 1e-14);
    }

    #[test]
    fn beta_three_blocks() {
        let m = LambdaMeasure::beta(1.5).unwrap();
        assert_relative_eq!(m.lambda_bk(3, 2).unwrap(), 0.75, max_relative = 1e-12);
        assert_relative_eq!(m.lambda_bk_quadrature(3, 2).unwrap(), 0.75, max_relative = 1e-10);
        let t = m.rate_table(3).unwrap();
        assert_relative_eq!(t.rate(3), 0.25, max_relative = 1e-12);
        assert_relative_eq!(t.lambda_total, 2.5, max_relative = 1e-12);
        assert_relative_eq!(t.gamma, 2.75, max_relative = 1e-12);
        // lambda_2 is the total mass
        assert_relative_eq!(m.lambda_bk(2, 2).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn uniform_table_four_blocks() {
        let m = uniform();
        assert_relative_eq!(m.total_mass(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(m.lambda_bk(4, 4).unwrap(), 1.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn bad_k_is_rejected() {
        let m = LambdaMeasure::kingman(1.0).unwrap();
        assert!(m.lambda_bk(5, 1).is_err());
        assert!(m.lambda_bk(5, 6).is_err());
        assert!(m.rate_table(1).is_err());
    }

    #[test]
    fn invalid_measures_are_rejected() {
        assert!(LambdaMeasure::kingman(-1.0).is_err());
        assert!(LambdaMeasure::beta(2.0).is_err());
        assert!(LambdaMeasure::beta(0.9).is_err());
        assert!(LambdaMeasure::table(vec![]).is_err());
        assert!(LambdaMeasure::table(vec![(0.5, 1.0), (0.4, 1.0)]).is_err());
        assert!(LambdaMeasure::table(vec![(0.5, f64::INFINITY)]).is_err());
        assert!(LambdaMeasure::table(vec![(0.5, -1.0)]).is_err());
        assert!(LambdaMeasure::table(vec![(1.5, 1.0)]).is_err());
    }

    #[test]
    fn parse_grammar() {
        assert_eq!(LambdaMeasure::parse("kingman:2").unwrap(), LambdaMeasure::kingman(2.0).unwrap());
        assert_eq!(LambdaMeasure::parse("beta:1.5").unwrap(), LambdaMeasure::beta(1.5).unwrap());
        let mix = LambdaMeasure::parse("mix:0.5+beta:1.2").unwrap();
        assert_eq!(mix.kingman_mass(), 0.5);
        assert_relative_eq!(mix.total_mass(), 1.5);
        assert!(LambdaMeasure::parse("gamma:1").is_err());
        assert!(LambdaMeasure::parse("beta").is_err());
        assert!(LambdaMeasure::parse("mix:1+kingman:2").is_err());
    }

    #[test]
    fn parse_table_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "x,density\n0.25,2\n1.0,2\n").unwrap();
        let m = LambdaMeasure::parse(&format!("table:{}", path.display())).unwrap();
        assert_relative_eq!(m.total_mass(), 2.0);
        std::fs::write(&path, "y,density\n0.25,2\n").unwrap();
        assert!(LambdaMeasure::parse(&format!("table:{}", path.display())).is_err());
    }

    #[test]
    fn table_is_flat_below_and_zero_above() {
        let m = LambdaMeasure::table(vec![(0.2, 3.0), (0.6, 1.0)]).unwrap();
        assert_eq!(m.density_at(0.01), 3.0);
        assert_relative_eq!(m.density_at(0.4), 2.0);
        assert_eq!(m.density_at(0.8), 0.0);
        assert_relative_eq!(m.total_mass(), 0.6 + 0.8);
    }

    #[test]
    fn stable_helpers_match_naive_forms() {
        for &y in &[1e-6f64, 1e-3, 0.5, 3.0, 40.0] {
            let naive = (-y).exp() - 1.0 + y;
            assert_relative_eq!(phi(y), naive, max_relative = if y < 1e-2 { 1e-4 } else { 1e-12 });
        }
        assert_relative_eq!(phi(1e-6), 0.5e-12, max_relative = 1e-5);
        for &(b, x) in &[(2u64, 0.3f64), (10, 0.05), (10, 0.5), (100, 1e-5), (1000, 0.01)] {
            let naive = 1.0 - (1.0 - x).powi(b as i32) - b as f64 * x * (1.0 - x).powi(b as i32 - 1);
            assert_relative_eq!(prob_at_least_two(b, x), naive, max_relative = 1e-6);
            let lost = b as f64 * x - 1.0 + (1.0 - x).powi(b as i32);
            assert_relative_eq!(blocks_lost(b, x), lost, max_relative = 1e-6);
        }
        // tiny bx: P(K >= 2) ~ C(b,2) x^2
        assert_relative_eq!(prob_at_least_two(1000, 1e-12), choose2(1000) * 1e-24, max_relative = 1e-6);
        assert_relative_eq!(blocks_lost(1000, 1e-12), choose2(1000) * 1e-24, max_relative = 1e-6);
    }

    #[test]
    fn integral_totals_match_table_sums() {
        for m in [LambdaMeasure::beta(1.5).unwrap(), LambdaMeasure::mix(0.3, 1.2).unwrap(), uniform()] {
            for b in [2u64, 3, 7, 30, 120] {
                let t = m.rate_table(b).unwrap();
                assert_relative_eq!(m.total_rate(b), t.lambda_total, max_relative = 1e-9);
                assert_relative_eq!(m.gamma_rate(b), t.gamma, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn condition_a_kingman_closed_form() {
        // m * sum_{b>m}^{B} 2/(b(b-1)) = 2 - 2m/B
        let m = LambdaMeasure::kingman(1.0).unwrap();
        let diag = check_condition_a(&m, 2.0, 100, 1000).unwrap();
        for row in &diag.rows {
            assert_relative_eq!(row.value, 2.0 - 2.0 * row.m as f64 / 1000.0, max_relative = 1e-10);
        }
        assert!(diag.plausibly_bounded);
        assert!(check_condition_a(&m, 1.0, 10, 100).is_err());
        assert!(check_condition_a(&m, 2.0, 10, 99).is_err());
    }

    #[test]
    fn condition_a_small_range_unrolled() {
        let m = LambdaMeasure::beta(1.5).unwrap();
        let diag = check_condition_a(&m, 1.5, 2, 20).unwrap();
        let expected: f64 = 2f64.powf(0.5) * (3..=20).map(|b| 1.0 / m.rate_table(b).unwrap().lambda_total).sum::<f64>();
        assert_relative_eq!(diag.rows[1].value, expected, max_relative = 1e-9);
    }

    #[test]
    fn condition_a_beta_is_bounded() {
        let m = LambdaMeasure::beta(1.5).unwrap();
        let diag = check_condition_a(&m, 1.5, 100, 1000).unwrap();
        assert!(diag.plausibly_bounded, "{:?}", &diag.rows[90..]);
        let max = diag.rows.iter().map(|r| r.value).fold(0.0, f64::max);
        assert!(max < 10.0);
    }

    #[test]
    fn density_bounds_for_beta() {
        let m = LambdaMeasure::beta(1.5).unwrap();
        let a = 1.0 / (ln_gamma(0.5) + ln_gamma(1.5)).exp();
        let c = check_density_bounds(&m, 1.5, a, 0.5, 50).unwrap();
        assert!(c.upper_holds);
        assert!(!c.lower_holds);
        assert!(c.max_ratio <= 1.0 + 1e-12);
        let a2 = a * 0.5f64.powf(0.5);
        let c = check_density_bounds(&m, 1.5, a2, 0.5, 50).unwrap();
        assert!(c.lower_holds, "{c:?}");
    }

    #[test]
    fn density_bounds_for_kingman() {
        let m = LambdaMeasure::kingman(1.0).unwrap();
        let c = check_density_bounds(&m, 1.5, 1.0, 0.5, 10).unwrap();
        assert!(!c.lower_holds);
        assert!(c.note.is_some());
        assert!(check_density_bounds(&m, 1.5, 1.0, 0.5, 9).is_err());
        assert!(check_density_bounds(&m, 1.5, 1.0, 1.0, 10).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scaling_is_linear(c in 0.01f64..50.0, beta in 1.05f64..1.95, b in 2u64..25) {
            let m = LambdaMeasure::mix(0.7, beta).unwrap();
            let s = m.scaled(c).unwrap();
            let (t, ts) = (m.rate_table(b).unwrap(), s.rate_table(b).unwrap());
            for k in 2..=b {
                prop_assert!((ts.rate(k) - c * t.rate(k)).abs() <= 1e-12 * c * t.rate(k).max(1e-300));
            }
            prop_assert!((ts.lambda_total - c * t.lambda_total).abs() <= 1e-12 * c * t.lambda_total);
            prop_assert!((ts.gamma - c * t.gamma).abs() <= 1e-12 * c * t.gamma);
        }

        #[test]
        fn domination(beta in 1.05f64..1.95, b in 2u64..40) {
            let m = LambdaMeasure::mix(0.2, beta).unwrap();
            let t = m.rate_table(b).unwrap();
            prop_assert!(t.gamma <= (b - 1) as f64 * t.lambda_total * (1.0 + 1e-12));
            for k in 2..=b {
                prop_assert!(t.rate(k) <= t.rate(2) * (1.0 + 1e-12));
                prop_assert!(t.rate(k) >= 0.0);
            }
        }
    }
}
