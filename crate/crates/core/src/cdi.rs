//! Coming down from infinity: the Laplace exponent `psi`, the speed integral
//! `u(t) = int_t^inf dq / psi(q)` and its inverse `v`, which tracks the number
//! of blocks of a coalescent started from infinitely many.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{decade_breaks, phi, LambdaMeasure};
use crate::quad::{self, Tolerance};

/// Local growth exponents below `1 + TAIL_MARGIN` are treated as divergent.
pub const TAIL_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ComesDown,
    StaysInfinite,
    Inconclusive,
}

/// Classify a growth exponent of `gamma_n` (or `psi(q)`). `far` is the
/// exponent at the largest scale probed, `near` one decade earlier.
fn classify(far: f64, near: f64) -> Verdict {
    if far < 1.0 + TAIL_MARGIN {
        Verdict::StaysInfinite
    } else if far < 1.0 + 2.0 * TAIL_MARGIN && far < near - 1e-3 {
        Verdict::Inconclusive
    } else {
        Verdict::ComesDown
    }
}

/// `psi(q) = Lambda({0}) q^2/2 + int (e^{-qx} - 1 + qx) x^{-2} Lambda_0(dx)`.
pub fn psi(measure: &LambdaMeasure, q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let atom = measure.kingman_mass() * q * q / 2.0;
    if !measure.has_density() {
        return atom;
    }
    let g = |x: f64| {
        let y = q * x;
        if y < 1e-150 {
            q * q / 2.0
        } else {
            phi(y) / (x * x)
        }
    };
    atom + measure.integrate_density(g, &decade_breaks(1.0 / q, 0.0), Tolerance::rel(1e-12))
}

/// Tabulated `psi` and `u` on a geometric grid of `q`, with a power-law tail
/// beyond the top node. Values between nodes are computed by quadrature, not
/// interpolated.
#[derive(Debug, Clone, Serialize)]
pub struct SpeedTable {
    pub measure_id: String,
    pub psi_grid: Vec<(f64, f64)>,
    pub u_grid: Vec<(f64, f64)>,
    pub q_cutoff: f64,
    pub tail_exponent: f64,
    pub tail_coefficient: f64,
    pub cdi_verdict: Verdict,
    #[serde(skip)]
    measure: LambdaMeasure,
}

const NODES_PER_DECADE: usize = 10;

fn inv_psi_integral(measure: &LambdaMeasure, a: f64, b: f64) -> f64 {
    // substitute q = e^w
    let f = |w: f64| {
        let q = w.exp();
        q / psi(measure, q)
    };
    quad::integrate(f, a.ln(), b.ln(), Tolerance::rel(1e-12)).value
}

impl SpeedTable {
    /// Table over `[1e-4, 1e12]`.
    pub fn new(measure: &LambdaMeasure) -> Result<Self> {
        Self::build(measure, 1e-4, 1e12)
    }

    pub fn build(measure: &LambdaMeasure, q_min: f64, q_max: f64) -> Result<Self> {
        if !(q_min > 0.0 && q_max > 100.0 * q_min) {
            return Err(Error::InvalidArgument(format!(
                "speed table needs 0 < q_min and q_max >= 100 q_min (got {q_min}, {q_max})"
            )));
        }
        if measure.total_mass() <= 0.0 {
            return Err(Error::StaysInfinite("measure has zero mass, no mergers occur".into()));
        }
        let decades = (q_max / q_min).log10();
        let count = (decades * NODES_PER_DECADE as f64).ceil() as usize;
        let nodes: Vec<f64> = (0..=count)
            .map(|i| q_min * (q_max / q_min).powf(i as f64 / count as f64))
            .collect();
        let psi_grid: Vec<(f64, f64)> = nodes.iter().map(|&q| (q, psi(measure, q))).collect();

        let top = psi(measure, q_max);
        let tenth = psi(measure, q_max / 10.0);
        let hundredth = psi(measure, q_max / 100.0);
        let tail_exponent = (top / tenth).log10();
        let near_exponent = (tenth / hundredth).log10();
        let tail_coefficient = top / q_max.powf(tail_exponent);
        let cdi_verdict = classify(tail_exponent, near_exponent);

        let tail = if tail_exponent > 1.0 {
            q_max / (top * (tail_exponent - 1.0))
        } else {
            f64::INFINITY
        };
        let mut u_grid = vec![(0.0, 0.0); nodes.len()];
        let mut acc = tail;
        u_grid[nodes.len() - 1] = (q_max, acc);
        for i in (0..nodes.len() - 1).rev() {
            acc += inv_psi_integral(measure, nodes[i], nodes[i + 1]);
            u_grid[i] = (nodes[i], acc);
        }
        Ok(SpeedTable {
            measure_id: measure.label(),
            psi_grid,
            u_grid,
            q_cutoff: q_max,
            tail_exponent,
            tail_coefficient,
            cdi_verdict,
            measure: measure.clone(),
        })
    }

    pub fn psi(&self, q: f64) -> f64 {
        psi(&self.measure, q)
    }

    fn require_cdi(&self) -> Result<()> {
        match self.cdi_verdict {
            Verdict::ComesDown => Ok(()),
            other => Err(Error::StaysInfinite(format!(
                "{}: psi grows like q^{:.4} at q = {:e} ({other:?})",
                self.measure_id, self.tail_exponent, self.q_cutoff
            ))),
        }
    }

    /// `u(t) = int_t^inf dq / psi(q)`.
    pub fn u(&self, t: f64) -> Result<f64> {
        self.require_cdi()?;
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("u(t) needs t > 0, got {t}")));
        }
        let (q0, u0) = self.u_grid[0];
        if t >= self.q_cutoff {
            let p = self.tail_exponent;
            return Ok(t.powf(1.0 - p) / (self.tail_coefficient * (p - 1.0)));
        }
        if t < q0 {
            return Ok(u0 + inv_psi_integral(&self.measure, t, q0));
        }
        let idx = self.u_grid.partition_point(|&(q, _)| q <= t);
        let (q_next, u_next) = self.u_grid[idx];
        Ok(u_next + inv_psi_integral(&self.measure, t, q_next))
    }

    /// `v(t)`, the inverse of `u`. The tabulated `u` brackets the root
    /// between two nodes; safeguarded Newton steps in `ln q` finish it.
    pub fn v(&self, t: f64) -> Result<f64> {
        self.require_cdi()?;
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("v(t) needs t > 0, got {t}")));
        }
        let last = self.u_grid.len() - 1;
        let (q_top, u_top) = self.u_grid[last];
        if t <= u_top {
            let p = self.tail_exponent;
            return Ok((t * self.tail_coefficient * (p - 1.0)).powf(1.0 / (1.0 - p)).max(q_top));
        }
        let (mut lo, mut hi, anchor, mut w) = if t < self.u_grid[0].1 {
            // u is decreasing along the grid; start from log-log interpolation
            let idx = self.u_grid.partition_point(|&(_, u)| u >= t);
            let ((q0, u0), (q1, u1)) = (self.u_grid[idx - 1], self.u_grid[idx]);
            let f = (t / u0).ln() / (u1 / u0).ln();
            (q0, q1, self.u_grid[idx], q0.ln() + f * (q1 / q0).ln())
        } else {
            let mut lo = self.u_grid[0].0;
            while self.u(lo)? < t {
                lo /= 2.0;
            }
            (lo, self.u_grid[0].0, self.u_grid[0], (lo * self.u_grid[0].0).sqrt().ln())
        };
        // g(q) = u(q) - t is decreasing, g(lo) >= 0 > g(hi)
        let g = |q: f64| anchor.1 + inv_psi_integral(&self.measure, q, anchor.0) - t;
        for _ in 0..100 {
            let q = w.exp();
            let gq = g(q);
            if gq >= 0.0 {
                lo = q;
            } else {
                hi = q;
            }
            // dg/dw = -q / psi(q)
            let step = gq * self.psi(q) / q;
            // quadrature noise is near 1e-12, so finer steps are meaningless
            if step.abs() <= 1e-13 {
                return Ok((w + step).exp());
            }
            let mut next = w + step;
            if !(next > lo.ln() && next < hi.ln()) {
                next = 0.5 * (lo.ln() + hi.ln());
            }
            if hi / lo - 1.0 < 1e-13 {
                return Ok(next.exp());
            }
            w = next;
        }
        Ok(w.exp())
    }
}

/// `u(t)` for a single evaluation; builds a default table.
pub fn u_of_t(measure: &LambdaMeasure, t: f64) -> Result<f64> {
    SpeedTable::new(measure)?.u(t)
}

/// `v(t)` for a single evaluation; builds a default table.
pub fn v_of_t(measure: &LambdaMeasure, t: f64) -> Result<f64> {
    SpeedTable::new(measure)?.v(t)
}

/// Lower bound `v(t) >= 2 / (Lambda([0,1]) t)`, valid for every finite measure.
pub fn v_lower_bound(measure: &LambdaMeasure, t: f64) -> f64 {
    2.0 / (measure.total_mass() * t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchweinsbergReport {
    pub verdict: Verdict,
    /// `(n, sum_{m=2}^{n} 1/gamma_m)` at geometrically spaced `n`.
    pub partial_sum_trace: Vec<(u64, f64)>,
    pub partial_sum: f64,
    /// Growth exponent of `gamma_n` over the last decade below `b_max`.
    pub near_exponent: f64,
    /// Growth exponent of `gamma_n` over the top decade of the extension.
    pub far_exponent: f64,
    /// Power-law estimate of `sum_{n > b_max} 1/gamma_n`.
    pub tail_estimate: f64,
}

/// Partial sums of `1/gamma_n` and a verdict on their convergence.
///
/// `gamma_n` is also evaluated far beyond `b_max` (up to `n = 1e15`) to read
/// off the growth exponent, since slowly varying corrections such as
/// `n log n` only separate from `n^{1+delta}` at large `n`.
pub fn schweinsberg_verdict(measure: &LambdaMeasure, b_max: u64) -> Result<SchweinsbergReport> {
    if b_max < 100 {
        return Err(Error::InvalidArgument(format!("b_max must be at least 100, got {b_max}")));
    }
    if measure.total_mass() <= 0.0 {
        return Err(Error::InvalidMeasure("measure has zero mass".into()));
    }
    let mut partial = 0.0;
    let mut trace = Vec::new();
    let mut next_mark = 2.0f64;
    for n in 2..=b_max {
        partial += 1.0 / measure.gamma_rate(n);
        if n as f64 >= next_mark || n == b_max {
            trace.push((n, partial));
            while next_mark <= n as f64 {
                next_mark *= 10f64.powf(0.1);
            }
        }
    }
    let g_top = measure.gamma_rate(b_max);
    let g_low = measure.gamma_rate((b_max / 10).max(2));
    let near_exponent = (g_top / g_low).ln() / (b_max as f64 / (b_max / 10).max(2) as f64).ln();

    let mut far_n = b_max as f64;
    while far_n < 1e15 {
        far_n *= 10.0;
    }
    let far = |n: f64| measure.gamma_rate(n as u64);
    let (g1, g2, g3) = (far(far_n / 100.0), far(far_n / 10.0), far(far_n));
    let far_exponent = (g3 / g2).log10();
    let prev_exponent = (g2 / g1).log10();
    let verdict = classify(far_exponent, prev_exponent);
    let tail_estimate = if near_exponent > 1.0 {
        b_max as f64 / (g_top * (near_exponent - 1.0))
    } else {
        f64::INFINITY
    };
    Ok(SchweinsbergReport {
        verdict,
        partial_sum_trace: trace,
        partial_sum: partial,
        near_exponent,
        far_exponent,
        tail_estimate,
    })
}
