//! Online model maintenance: the upstream Thevenin equivalent from primary
//! measurements, and ZP load parameters from pairs of load measurements.

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dsp::Dsp;
use crate::error::{Error, Result};
use crate::network::{ControlVector, Network, UpstreamThevenin, ZpLoad};
use crate::perturbed::assemble;
use crate::phasor::Phasor;
use crate::power_flow::{solve_power_flow, Prices};

fn arg(p: Phasor) -> f64 {
    p.angle().unwrap_or(0.0)
}

/// Primary-side measurement of the transformer bank. Only magnitudes and
/// the current-voltage angle difference are used; the absolute phase
/// reference of each snapshot is unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSnapshot {
    pub v_p: Phasor,
    pub i_p: Phasor,
    /// `arg(I_p) - arg(V_p)`.
    pub phase_offset: f64,
    pub timestamp: f64,
}

impl MeasurementSnapshot {
    pub fn from_phasors(v_p: Phasor, i_p: Phasor, timestamp: f64) -> Self {
        Self {
            v_p,
            i_p,
            phase_offset: arg(i_p) - arg(v_p),
            timestamp,
        }
    }

    /// Snapshot from magnitudes, with the voltage as local reference.
    pub fn from_magnitudes(v: f64, i: f64, phase_offset: f64, timestamp: f64) -> Self {
        Self {
            v_p: Phasor::new(v, 0.0),
            i_p: Phasor::from_polar(i, phase_offset),
            phase_offset,
            timestamp,
        }
    }

    /// `(V, I)` in the frame where the voltage angle is zero.
    fn local(&self) -> (f64, Phasor) {
        (self.v_p.norm(), Phasor::from_polar(self.i_p.norm(), self.phase_offset))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheveninEstimate {
    pub v_th: f64,
    pub z_th: Phasor,
    /// Norm of the six equation residuals at the returned point.
    pub residual: f64,
    /// Voltage angle of each snapshot relative to the Thevenin source.
    pub angles: [f64; 3],
    pub iterations: usize,
}

impl TheveninEstimate {
    pub fn upstream(&self) -> UpstreamThevenin {
        UpstreamThevenin {
            v_th: self.v_th,
            z_th: self.z_th,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheveninOptions {
    /// Smallest accepted distance between the local current phasors of any
    /// two snapshots.
    pub min_current_spread: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Impedance the estimate is expected near. Three snapshots admit two
    /// exact solutions; the one closer to this is returned. Without it the
    /// more inductive solution with `R, X >= 0` is preferred.
    pub prior_z: Option<Phasor>,
}

impl Default for TheveninOptions {
    fn default() -> Self {
        Self {
            min_current_spread: 1e-3,
            tolerance: 1e-13,
            max_iterations: 50,
            prior_z: None,
        }
    }
}

/// Residuals of `V_th = (V_p + Z I_p) e^{j d}` per snapshot, real and
/// imaginary parts. Unknowns `[V_th, R, X, d0, d1, d2]`; the impedance is
/// kept Cartesian so that `Z = 0` is a regular point.
fn thevenin_residual(u: &[f64; 6], data: &[(f64, Phasor); 3]) -> (DVector<f64>, DMatrix<f64>) {
    let mut f = DVector::zeros(6);
    let mut j = DMatrix::zeros(6, 6);
    let z = Phasor::new(u[1], u[2]);
    for (k, (v, i)) in data.iter().enumerate() {
        let rot = Phasor::from_polar(1.0, u[3 + k]);
        let w = (Phasor::new(*v, 0.0) + z * *i) * rot;
        let di = *i * rot;
        let (re, ie) = (2 * k, 2 * k + 1);
        f[re] = u[0] - w.x;
        f[ie] = -w.y;
        j[(re, 0)] = 1.0;
        j[(re, 1)] = -di.x;
        j[(ie, 1)] = -di.y;
        // d/dX of j X I
        j[(re, 2)] = di.y;
        j[(ie, 2)] = -di.x;
        // d/dd of w
        j[(re, 3 + k)] = w.y;
        j[(ie, 3 + k)] = -w.x;
    }
    (f, j)
}

/// Angle-free starting points: `|V + Z I|^2 = V_th^2` per snapshot is
/// linear in `(V_th^2, R, X)` plus `s |I|^2` with `s = |Z|^2`, so the
/// solution is affine in `s` and `s` solves a quadratic. Both roots are
/// exact solutions; they are returned in order of preference.
fn thevenin_starts(data: &[(f64, Phasor); 3], prior: Option<Phasor>) -> Result<Vec<(f64, Phasor)>> {
    let m = Matrix3::from_fn(|r, c| {
        let (v, i) = data[r];
        match c {
            0 => -1.0,
            1 => 2.0 * v * i.x,
            _ => -2.0 * v * i.y,
        }
    });
    let svd = m.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Conditioning(format!(
            "snapshots are nearly dependent (singular values {smin:.3e} / {smax:.3e})"
        )));
    }
    let lu = m.lu();
    let solve = |f: &dyn Fn(f64, Phasor) -> f64| {
        let rhs = Vector3::from_fn(|r, _| f(data[r].0, data[r].1));
        lu.solve(&rhs)
            .ok_or_else(|| Error::Conditioning("singular start system".into()))
    };
    let y0 = solve(&|v, _| -(v * v))?;
    let y1 = solve(&|_, i| -i.norm_sqr())?;
    // s = (y0_R + s y1_R)^2 + (y0_X + s y1_X)^2
    let qa = y1[1] * y1[1] + y1[2] * y1[2];
    let qb = 2.0 * (y0[1] * y1[1] + y0[2] * y1[2]) - 1.0;
    let qc = y0[1] * y0[1] + y0[2] * y0[2];
    let mut roots = Vec::new();
    if qa.abs() <= 1e-300 {
        roots.push(-qc / qb);
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return Err(Error::Conditioning(format!("start system has no real impedance (discriminant {disc:.3e})")));
        }
        // numerically stable pair
        let q = -0.5 * (qb + qb.signum() * disc.sqrt());
        roots.push(q / qa);
        if q != 0.0 {
            roots.push(qc / q);
        }
    }
    let mut starts: Vec<(f64, Phasor)> = roots
        .into_iter()
        .filter(|s| *s >= -1e-12)
        .map(|s| (y0[0] + s * y1[0], Phasor::new(y0[1] + s * y1[1], y0[2] + s * y1[2])))
        .filter(|(v2, _)| *v2 > 0.0)
        .map(|(v2, z)| (v2.sqrt(), z))
        .collect();
    if starts.is_empty() {
        return Err(Error::Conditioning("start system has no solution with positive V_th".into()));
    }
    let rank = |z: &Phasor| match prior {
        Some(p) => (0, (*z - p).norm()),
        None => {
            let physical = z.x >= -1e-12 && z.y >= -1e-12;
            (!physical as u8, -z.y.atan2(z.x))
        }
    };
    starts.sort_by(|a, b| {
        let (ka, kb) = (rank(&a.1), rank(&b.1));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    Ok(starts)
}

/// Damped Newton on the six real equations from one start.
fn thevenin_newton(data: &[(f64, Phasor); 3], vth: f64, z: Phasor, opts: &TheveninOptions) -> Result<TheveninEstimate> {
    let mut u = [vth, z.x, z.y, 0.0, 0.0, 0.0];
    for k in 0..3 {
        let (v, i) = data[k];
        u[3 + k] = -arg(Phasor::new(v, 0.0) + z * i);
    }
    let (mut f, mut jac) = thevenin_residual(&u, data);
    let mut norm = f.norm();
    let mut iterations = 0;
    while norm > opts.tolerance && iterations < opts.max_iterations {
        iterations += 1;
        let step = jac
            .clone()
            .lu()
            .solve(&(-&f))
            .ok_or_else(|| Error::Conditioning("singular Jacobian".into()))?;
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-6 {
            let mut trial = u;
            for (x, d) in trial.iter_mut().zip(step.iter()) {
                *x += t * d;
            }
            let (ft, jt) = thevenin_residual(&trial, data);
            if ft.norm() < norm || ft.norm() <= opts.tolerance {
                u = trial;
                norm = ft.norm();
                f = ft;
                jac = jt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let svd = jac.clone().svd(false, false);
    let cond = svd.singular_values.max() / svd.singular_values.min();
    if !(cond < 1e12) {
        return Err(Error::Conditioning(format!("Jacobian condition number {cond:.3e}")));
    }
    if !(norm <= 1e-8) {
        return Err(Error::Solver(format!("Thevenin Newton stalled at residual {norm:.3e}")));
    }
    if !(u[0] > 0.0) {
        return Err(Error::Solver(format!("Thevenin Newton converged to V_th = {:.3e}", u[0])));
    }
    Ok(TheveninEstimate {
        v_th: u[0],
        z_th: Phasor::new(u[1], u[2]),
        residual: norm,
        angles: [u[3], u[4], u[5]],
        iterations,
    })
}

/// Thevenin voltage and impedance from three snapshots taken at materially
/// different downstream states, by damped Newton on the six real equations
/// (real and imaginary part per snapshot).
pub fn estimate_thevenin(snapshots: &[MeasurementSnapshot], opts: &TheveninOptions) -> Result<TheveninEstimate> {
    if snapshots.len() != 3 {
        return Err(Error::domain(format!("expected 3 snapshots, got {}", snapshots.len())));
    }
    if snapshots.iter().any(|s| !(s.v_p.norm() > 0.0)) {
        return Err(Error::domain("snapshot with zero primary voltage"));
    }
    let data: [(f64, Phasor); 3] = std::array::from_fn(|k| snapshots[k].local());
    let mut spread = f64::INFINITY;
    for a in 0..3 {
        for b in a + 1..3 {
            spread = spread.min((data[a].1 - data[b].1).norm());
        }
    }
    if spread < opts.min_current_spread {
        return Err(Error::Conditioning(format!(
            "current phasors differ by only {spread:.3e} (minimum {:.3e})",
            opts.min_current_spread
        )));
    }
    let mut last = None;
    for (vth, z) in thevenin_starts(&data, opts.prior_z)? {
        match thevenin_newton(&data, vth, z, opts) {
            Ok(e) => return Ok(e),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one start"))
}

/// Primary voltage and current for a Thevenin source driving the local
/// current `i` (reference: the source angle).
pub fn primary_voltage(th: &UpstreamThevenin, i: Phasor) -> Phasor {
    Phasor::new(th.v_th, 0.0) - th.z_th * i
}

/// Something that can apply a set of controls and report primary
/// measurements afterwards.
pub trait MeasurementSource {
    fn apply_and_measure(&mut self, controls: &ControlVector) -> Result<MeasurementSnapshot>;
}

/// Simulated plant: the measurements come from a power flow of the true
/// network.
#[derive(Debug, Clone)]
pub struct PowerFlowPlant {
    pub net: Network,
    pub clock: f64,
}

impl PowerFlowPlant {
    pub fn new(net: Network) -> Self {
        Self { net, clock: 0.0 }
    }
}

impl MeasurementSource for PowerFlowPlant {
    fn apply_and_measure(&mut self, controls: &ControlVector) -> Result<MeasurementSnapshot> {
        let op = solve_power_flow(&self.net, controls, None)?;
        self.clock += 1.0;
        Ok(MeasurementSnapshot::from_phasors(op.v_primary, op.i_primary, self.clock))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpstreamOptions {
    pub eps_v: f64,
    pub eps_z: f64,
    /// Moves smaller than this (in layout units) are not changes.
    pub min_change: f64,
    pub thevenin: TheveninOptions,
}

impl Default for UpstreamOptions {
    fn default() -> Self {
        Self {
            eps_v: 5e-3,
            eps_z: 5e-3,
            min_change: 1e-6,
            thevenin: TheveninOptions::default(),
        }
    }
}

/// One scheduled move of one control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlChange {
    /// Position in the control layout.
    pub index: usize,
    pub from: f64,
    pub to: f64,
    /// Cost change of this move alone under the quadratic power model.
    pub cost_impact: f64,
    /// Predicted size of the primary current change this move causes.
    pub current_change: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UpstreamUpdate {
    /// Model to use from now on. When estimation failed it keeps the previous
    /// impedance with the held-impedance voltage.
    pub thevenin: UpstreamThevenin,
    /// `|V_th|` backed out from the first snapshot with the old impedance.
    pub v_th_held_z: f64,
    pub estimate: Option<TheveninEstimate>,
    pub changes: Vec<ControlChange>,
    pub snapshots: Vec<MeasurementSnapshot>,
    pub delta_v: f64,
    pub delta_z: f64,
    pub reschedule: bool,
    /// Estimation failed and the impedance was not refreshed.
    pub stale: bool,
    /// Controls in effect after the probing changes.
    #[serde(skip)]
    pub applied: ControlVector,
}

/// Scheduled moves from `current` to `scheduled` ordered by the absolute
/// cost of each move alone (second-order model at `current`).
pub fn rank_changes(
    net: &Network,
    prices: Prices,
    tau: f64,
    current: &ControlVector,
    scheduled: &ControlVector,
    min_change: f64,
) -> Result<Vec<ControlChange>> {
    let mut dsp = Dsp::new(net, prices, tau, current.clone());
    let x = dsp.flatten(current);
    let y = dsp.flatten(scheduled);
    let lin = dsp.linearize(&x)?;
    let op = dsp.operating_point(&x)?;
    let power = assemble(net, &op, current)?.quadratic_upstream_power(net)?;
    let mut out: Vec<ControlChange> = (0..x.len())
        .filter(|&j| (y[j] - x[j]).abs() > min_change)
        .map(|j| {
            let d = y[j] - x[j];
            ControlChange {
                index: j,
                from: x[j],
                to: y[j],
                cost_impact: lin.grad[j] * d + 0.5 * lin.hessian[(j, j)] * d * d,
                current_change: power.di_primary[j].norm() * d.abs(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.cost_impact.abs().total_cmp(&b.cost_impact.abs()).then(a.index.cmp(&b.index)));
    Ok(out)
}

/// One period of upstream tracking. `net` holds the previous model and is
/// not modified; `scheduler` is called with the network carrying the
/// refreshed `|V_th|` and returns the proposed controls.
pub fn update_upstream(
    net: &Network,
    prices: Prices,
    tau: f64,
    current: &ControlVector,
    source: &mut dyn MeasurementSource,
    scheduler: &mut dyn FnMut(&Network) -> Result<ControlVector>,
    opts: &UpstreamOptions,
) -> Result<UpstreamUpdate> {
    let previous = net.upstream;
    let snap0 = source.apply_and_measure(current)?;
    let (v0, i0) = snap0.local();
    let v_held = (Phasor::new(v0, 0.0) + previous.z_th * i0).norm();

    let mut refreshed = net.clone();
    refreshed.upstream.v_th = v_held;
    let scheduled = scheduler(&refreshed)?;
    let ranked = rank_changes(&refreshed, prices, tau, current, &scheduled, opts.min_change)?;
    // a probe must move the current enough to be told apart from noise
    let changes: Vec<ControlChange> = ranked
        .into_iter()
        .filter(|c| c.current_change >= opts.thevenin.min_current_spread)
        .take(2)
        .collect();

    let mut snapshots = vec![snap0];
    let mut applied = current.clone();
    let layout = net.control_layout();
    for ch in &changes {
        Network::set(&mut applied, layout[ch.index], ch.to);
        snapshots.push(source.apply_and_measure(&applied)?);
    }
    let estimate = if snapshots.len() == 3 {
        let th = TheveninOptions {
            prior_z: opts.thevenin.prior_z.or(Some(previous.z_th)),
            ..opts.thevenin
        };
        estimate_thevenin(&snapshots, &th)
    } else {
        Err(Error::Conditioning(format!("only {} scheduled changes to probe with", changes.len())))
    };
    let (thevenin, estimate, stale) = match estimate {
        Ok(e) => (e.upstream(), Some(e), false),
        Err(e) => {
            warn!("upstream estimation failed, keeping the held-impedance voltage: {e}");
            (
                UpstreamThevenin {
                    v_th: v_held,
                    z_th: previous.z_th,
                },
                None,
                true,
            )
        }
    };
    let delta_v = (thevenin.v_th - previous.v_th).abs();
    let delta_z = (thevenin.z_th - previous.z_th).norm();
    let reschedule = delta_v >= opts.eps_v || delta_z >= opts.eps_z;
    Ok(UpstreamUpdate {
        thevenin,
        v_th_held_z: v_held,
        estimate,
        changes,
        snapshots,
        delta_v,
        delta_z,
        reschedule,
        stale,
        applied,
    })
}

/// One load measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSnapshot {
    pub p: f64,
    pub q: f64,
    pub v: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadUpdateOptions {
    /// Smallest accepted voltage difference between the two snapshots.
    pub min_voltage_difference: f64,
    /// Relative parameter change that calls for rescheduling.
    pub significant_change: f64,
}

impl Default for LoadUpdateOptions {
    fn default() -> Self {
        Self {
            min_voltage_difference: 0.002,
            significant_change: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadUpdate {
    pub load: ZpLoad,
    pub reschedule: bool,
    /// A Z-share fell outside `[0, 1]` and was clipped.
    pub clipped: bool,
}

/// `(zeta', S_0)` from `S = S_0 zeta' u + S_0 (1 - zeta')` at two values of
/// `u = (|V| / V0)^2`.
fn zp_component(s: [f64; 2], u: [f64; 2]) -> Result<(f64, f64, bool)> {
    let m = Matrix2::new(u[0], 1.0, u[1], 1.0);
    let ab = m
        .lu()
        .solve(&Vector2::new(s[0], s[1]))
        .ok_or_else(|| Error::Conditioning("identical load voltages".into()))?;
    let s0 = ab[0] + ab[1];
    if s0 == 0.0 {
        return Ok((0.0, 0.0, false));
    }
    let zeta = ab[0] / s0;
    let clipped = zeta.clamp(0.0, 1.0);
    Ok((clipped, s0, clipped != zeta))
}

/// Refit one ZP load from two measurements at different voltages. The
/// input load supplies the bus and reference voltage and is the baseline
/// of the significance test.
pub fn update_load_params(load: &ZpLoad, snapshots: &[LoadSnapshot; 2], opts: &LoadUpdateOptions) -> Result<LoadUpdate> {
    let [a, b] = snapshots;
    if !(a.v > 0.0 && b.v > 0.0) {
        return Err(Error::domain("load voltage magnitude must be positive"));
    }
    if (a.v - b.v).abs() < opts.min_voltage_difference {
        return Err(Error::Conditioning(format!(
            "load voltages differ by {:.3e} (minimum {:.3e})",
            (a.v - b.v).abs(),
            opts.min_voltage_difference
        )));
    }
    let u = [(a.v / load.v0).powi(2), (b.v / load.v0).powi(2)];
    let (zeta_p, p_d0, cp) = zp_component([a.p, b.p], u)?;
    let (zeta_q, q_d0, cq) = zp_component([a.q, b.q], u)?;
    if cp || cq {
        warn!("load at bus {}: Z-share outside [0, 1] clipped", load.bus);
    }
    let fresh = ZpLoad {
        bus: load.bus,
        p_d0,
        q_d0,
        zeta_p,
        zeta_q,
        v0: load.v0,
    };
    let moved = |new: f64, old: f64| (new - old).abs() > opts.significant_change * old.abs() + 1e-12;
    let reschedule = moved(p_d0, load.p_d0)
        || moved(q_d0, load.q_d0)
        || moved(zeta_p, load.zeta_p)
        || moved(zeta_q, load.zeta_q);
    Ok(LoadUpdate {
        load: fresh,
        reschedule,
        clipped: cp || cq,
    })
}
