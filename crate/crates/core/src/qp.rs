//! Primal-dual interior-point method for small dense convex QPs with linear
//! rows, a box and one Euclidean ball:
//!
//! ```text
//! min 1/2 x'Hx + g'x   s.t.  A_eq x = b_eq,  A_in x <= b_in,
//!                            lower <= x <= upper,  ||D x|| <= r
//! ```
//!
//! The ball enters as the convex quadratic inequality `(||Dx||^2 - r^2)/2r <= 0`
//! and is handled exactly through its Hessian term. Mehrotra
//! predictor-corrector with an infeasible start.

use log::trace;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Diagonal scaling `D` and radius `r`.
    pub ball: Option<(Vec<f64>, f64)>,
}

impl QpProblem {
    /// Unconstrained problem of dimension `n`; add rows and bounds in place.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            ball: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub y_eq: DVector<f64>,
    pub z_in: DVector<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub z_ball: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

enum Kind {
    Row(usize),
    Lower(usize),
    Upper(usize),
    Ball,
}

/// Inequalities `c_j(x) <= 0` in the scaled variables.
struct Ineqs {
    kinds: Vec<Kind>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    d2: Option<Vec<f64>>,
}

impl Ineqs {
    fn eval(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mut c = &self.a * x - &self.b;
        let mut j = self.a.clone();
        if let Some(d2) = &self.d2 {
            let last = self.kinds.len() - 1;
            let q: f64 = x.iter().zip(d2).map(|(v, d)| d * v * v).sum();
            c[last] = 0.5 * (q - 1.0);
            for (i, d) in d2.iter().enumerate() {
                j[(last, i)] = d * x[i];
            }
        }
        (c, j)
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a: f64 = 1.0;
    for (x, d) in v.iter().zip(dv.iter()) {
        if *d < 0.0 {
            a = a.min(-x / d);
        }
    }
    a
}

/// Largest step in `(0, 1]` keeping `|D(x + a dx)| <= 2`; the linearized
/// ball row cannot be trusted much beyond its radius.
fn ball_step(d2: &[f64], x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    let (mut a2, mut a1, mut a0) = (0.0, 0.0, -4.0);
    for i in 0..x.len() {
        a2 += d2[i] * dx[i] * dx[i];
        a1 += 2.0 * d2[i] * x[i] * dx[i];
        a0 += d2[i] * x[i] * x[i];
    }
    if a0 >= 0.0 || a2 == 0.0 {
        return 1.0;
    }
    ((-a1 + (a1 * a1 - 4.0 * a2 * a0).sqrt()) / (2.0 * a2)).min(1.0)
}

pub fn solve_qp(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    let n = p.dim();
    // work in x = scale * u so that the ball has unit radius
    let scale = match &p.ball {
        Some((_, r)) if *r > 0.0 => *r,
        Some(_) => return Err(Error::Solver("ball radius must be positive".into())),
        None => 1.0,
    };
    let mut h = &p.h * (scale * scale);
    let mut g = &p.g * scale;
    // objective normalized to unit magnitude; multipliers scale back below
    let f_scale = h.amax().max(g.amax());
    let f_scale = if f_scale > 0.0 { f_scale } else { 1.0 };
    h /= f_scale;
    g /= f_scale;
    let a_eq = &p.a_eq * scale;
    let b_eq = p.b_eq.clone();

    let mut kinds = Vec::new();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in 0..p.a_in.nrows() {
        let row: Vec<f64> = p.a_in.row(r).iter().map(|v| v * scale).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            if p.b_in[r] < 0.0 {
                return Err(Error::Solver("inconsistent empty inequality row".into()));
            }
            continue;
        }
        kinds.push(Kind::Row(r));
        rows.push((row.iter().map(|v| v / norm).collect(), p.b_in[r] / norm));
    }
    for i in 0..n {
        if p.lower[i].is_finite() {
            let mut row = vec![0.0; n];
            row[i] = -1.0;
            kinds.push(Kind::Lower(i));
            rows.push((row, -p.lower[i] / scale));
        }
        if p.upper[i].is_finite() {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            kinds.push(Kind::Upper(i));
            rows.push((row, p.upper[i] / scale));
        }
        if p.lower[i] > p.upper[i] {
            return Err(Error::Solver(format!("empty bound interval on variable {i}")));
        }
    }
    let d2 = p.ball.as_ref().map(|(d, _)| d.iter().map(|v| v * v).collect::<Vec<_>>());
    if d2.is_some() {
        kinds.push(Kind::Ball);
        rows.push((vec![0.0; n], 0.0));
    }
    let m = rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (r, (row, rhs)) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            a[(r, c)] = *v;
        }
        b[r] = *rhs;
    }
    let ineq = Ineqs { kinds, a, b, d2 };
    let me = a_eq.nrows();

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(me);
    let (c0, _) = ineq.eval(&x);
    let mut s = DVector::from_fn(m, |j, _| (-c0[j]).max(1e-1));
    let mut z = DVector::from_fn(m, |j, _| 1.0 / s[j]);

    let gnorm = 1.0 + g.amax();
    let enorm = 1.0 + b_eq.amax();
    let mut iterations = 0;
    let mut kkt;
    loop {
        let (c, jc) = ineq.eval(&x);
        let mut rd = &h * &x + &g + jc.transpose() * &z;
        if me > 0 {
            rd += a_eq.transpose() * &y;
        }
        let re = &a_eq * &x - &b_eq;
        let ri = &c + &s;
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        let rd_n = rd.amax() / gnorm;
        let re_n = if me > 0 { re.amax() / enorm } else { 0.0 };
        let ri_n = if m > 0 { ri.amax() } else { 0.0 };
        kkt = rd_n.max(re_n).max(ri_n).max(mu);
        trace!("qp iter {iterations}: rd {rd_n:.2e} re {re_n:.2e} ri {ri_n:.2e} mu {mu:.2e}");
        if !x.iter().chain(z.iter()).all(|v| v.is_finite()) {
            return Err(Error::Solver("interior point produced non-finite iterates".into()));
        }
        if kkt <= opts.tolerance {
            break;
        }
        if iterations >= opts.max_iterations {
            if kkt <= 1e-6 {
                break;
            }
            return Err(Error::Solver(format!(
                "interior point stalled after {iterations} iterations (kkt {kkt:.2e})"
            )));
        }
        if z.amax() > 1e14 || !kkt.is_finite() {
            return Err(Error::Solver("QP appears infeasible".into()));
        }
        iterations += 1;

        let mut w = h.clone();
        if let Some(d2) = &ineq.d2 {
            let zb = z[m - 1];
            for i in 0..n {
                w[(i, i)] += zb * d2[i];
            }
        }
        let ratio = DVector::from_fn(m, |j, _| z[j] / s[j]);
        let mut jw = jc.clone();
        for r in 0..m {
            jw.row_mut(r).scale_mut(ratio[r]);
        }
        let k_mat = &w + jc.transpose() * &jw;
        let dim = n + me;
        let mut kkt_mat = DMatrix::zeros(dim, dim);
        kkt_mat.view_mut((0, 0), (n, n)).copy_from(&k_mat);
        let reg = 1e-12 * (1.0 + w.diagonal().amax());
        for i in 0..n {
            kkt_mat[(i, i)] += reg;
        }
        if me > 0 {
            kkt_mat.view_mut((n, 0), (me, n)).copy_from(&a_eq);
            kkt_mat.view_mut((0, n), (n, me)).copy_from(&a_eq.transpose());
            for i in 0..me {
                kkt_mat[(n + i, n + i)] = -1e-10;
            }
        }
        let lu = kkt_mat.lu();

        let solve = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // dz = (z/s)(J dx + ri) - rc/s ; ds = -(rc + s dz)/z
            let tmp = DVector::from_fn(m, |j, _| ratio[j] * ri[j] - rc[j] / s[j]);
            let rhs_x = -&rd - jc.transpose() * &tmp;
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&rhs_x);
            if me > 0 {
                rhs.rows_mut(n, me).copy_from(&(-&re));
            }
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, me).into_owned();
            let jdx = &jc * &dx;
            let dz = DVector::from_fn(m, |j, _| ratio[j] * (jdx[j] + ri[j]) - rc[j] / s[j]);
            let ds = DVector::from_fn(m, |j, _| -(rc[j] + s[j] * dz[j]) / z[j]);
            Some((dx, dy, dz, ds))
        };

        let rc_aff = s.component_mul(&z);
        let (_, _, dz_a, ds_a) =
            solve(&rc_aff).ok_or_else(|| Error::Solver("singular KKT system".into()))?;
        let a_aff = max_step(s.as_slice(), ds_a.as_slice()).min(max_step(z.as_slice(), dz_a.as_slice()));
        let sigma = if m > 0 {
            let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / m as f64;
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };
        // complementarity far below the tolerance only ruins the conditioning
        let target = (sigma * mu).max(0.01 * opts.tolerance);
        let rc = DVector::from_fn(m, |j, _| s[j] * z[j] + ds_a[j] * dz_a[j] - target);
        let (dx, dy, dz, ds) = solve(&rc).ok_or_else(|| Error::Solver("singular KKT system".into()))?;
        // one step length for primal and dual: H and the ball couple them
        let mut step = (0.995 * max_step(s.as_slice(), ds.as_slice()).min(max_step(z.as_slice(), dz.as_slice()))).min(1.0);
        if let Some(d2) = &ineq.d2 {
            step = step.min(ball_step(d2, &x, &dx));
        }
        x += &dx * step;
        s += &ds * step;
        y += &dy * step;
        z += &dz * step;
        for j in 0..m {
            s[j] = s[j].max(1e-300);
            z[j] = z[j].max(1e-300);
        }
        if ineq.d2.is_some() {
            // the linearized ball leaves a second-order residual; inside the
            // ball the slack can be made exact
            let (c_new, _) = ineq.eval(&x);
            if c_new[m - 1] < 0.0 {
                s[m - 1] = -c_new[m - 1];
            }
        }
    }

    let z = z * f_scale;
    let y = y * f_scale;
    let mut z_in = DVector::zeros(p.a_in.nrows());
    let mut z_lower = vec![0.0; n];
    let mut z_upper = vec![0.0; n];
    let mut z_ball = 0.0;
    for (j, k) in ineq.kinds.iter().enumerate() {
        match *k {
            Kind::Row(r) => {
                let norm = p.a_in.row(r).norm() * scale;
                z_in[r] = z[j] / norm;
            }
            Kind::Lower(i) => z_lower[i] = z[j] / scale,
            Kind::Upper(i) => z_upper[i] = z[j] / scale,
            // d/dx of (||Dx||^2/r^2 - 1)/2 is D^2 x / r^2
            Kind::Ball => z_ball = z[j] / (scale * scale),
        }
    }
    let x = x * scale;
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        y_eq: y / scale,
        z_in,
        z_lower,
        z_upper,
        z_ball,
        iterations,
        kkt_residual: kkt,
    })
}
