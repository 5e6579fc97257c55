//! OLTC transformer models: tap-dependent two-port chain, its π equivalent,
//! parallel aggregation, and the Norton-style injection seen from the
//! secondary bus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phasor::{Dual, Phasor};

/// How the primary series impedance follows the turn ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpedanceLaw {
    /// `Z_p(r) = (Z_t / 2) * r`
    #[default]
    Linear,
    /// `Z_p(r) = (Z_t / 2) * r^2`
    Quadratic,
}

/// Nameplate data of one OLTC transformer (per unit on the system base).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerUnit {
    pub capacity_mva: f64,
    pub x_series: f64,
    pub r_series: f64,
    pub x_magnetizing: f64,
    pub r_core: f64,
    pub tap_min: i32,
    pub tap_max: i32,
    /// Voltage change per tap step (pu).
    pub delta_u: f64,
}

impl TransformerUnit {
    pub fn validate(&self) -> Result<()> {
        if self.tap_min > 0 || self.tap_max < 0 {
            return Err(Error::validation(format!(
                "tap range [{}, {}] must contain the nominal position",
                self.tap_min, self.tap_max
            )));
        }
        if !(self.delta_u > 0.0) {
            return Err(Error::validation("delta_u must be positive"));
        }
        if !(self.r_core > 0.0 && self.x_magnetizing > 0.0) {
            return Err(Error::validation("magnetizing branch impedances must be positive"));
        }
        if !(self.x_series > 0.0 && self.r_series >= 0.0) {
            return Err(Error::validation("series impedance must be positive"));
        }
        Ok(())
    }

    pub fn z_series_nominal(&self) -> Phasor {
        Phasor::new(self.r_series, self.x_series)
    }

    /// Admittance of the core branch `R_c || jX_M`.
    pub fn y_magnetizing(&self) -> Phasor {
        Phasor::new(1.0 / self.r_core, -1.0 / self.x_magnetizing)
    }

    pub fn check_tap(&self, tap: i32) -> Result<()> {
        if tap < self.tap_min || tap > self.tap_max {
            return Err(Error::domain(format!(
                "tap {tap} outside [{}, {}]",
                self.tap_min, self.tap_max
            )));
        }
        Ok(())
    }

    /// Turn ratio at an integer tap position.
    pub fn turn_ratio(&self, tap: i32) -> Result<f64> {
        self.check_tap(tap)?;
        Ok(turn_ratio(tap as f64, self.delta_u))
    }
}

/// `r = 1 + tap * delta_u`, defined on the continuous relaxation of `tap`.
pub fn turn_ratio(tap: f64, delta_u: f64) -> f64 {
    1.0 + tap * delta_u
}

/// Per unit π equivalent, stored as branch admittances.
///
/// `y_series` is the admittance of `Z_sr`; the shunts are the admittances of
/// `Z_pr,p` (primary side) and `Z_pr,s` (secondary side). A zero shunt
/// admittance is an open branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiModel {
    pub y_series: Phasor,
    pub y_shunt_primary: Phasor,
    pub y_shunt_secondary: Phasor,
}

impl PiModel {
    pub fn from_impedances(z_series: Phasor, z_shunt_primary: Phasor, z_shunt_secondary: Phasor) -> Self {
        Self {
            y_series: z_series.inv(),
            y_shunt_primary: z_shunt_primary.inv(),
            y_shunt_secondary: z_shunt_secondary.inv(),
        }
    }

    pub fn z_series(&self) -> Phasor {
        self.y_series.inv()
    }

    pub fn z_shunt_primary(&self) -> Phasor {
        self.y_shunt_primary.inv()
    }

    pub fn z_shunt_secondary(&self) -> Phasor {
        self.y_shunt_secondary.inv()
    }
}

type Abcd<T> = [[T; 2]; 2];

fn mat_mul(a: &Abcd<Dual>, b: &Abcd<Dual>) -> Abcd<Dual> {
    let mut out = [[Dual::constant(Phasor::ZERO); 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Chain matrix `(V_p, I_p) = M (V_s, I_s)` of
/// series `Z_p(r)` -> ideal `r:1` -> core shunt -> series `Z_s`.
fn chain_abcd(unit: &TransformerUnit, r: Dual, law: ImpedanceLaw) -> Abcd<Dual> {
    let one = Dual::constant(Phasor::ONE);
    let zero = Dual::constant(Phasor::ZERO);
    let half_z = Dual::constant(unit.z_series_nominal().scale(0.5));
    let z_p = match law {
        ImpedanceLaw::Linear => half_z * r,
        ImpedanceLaw::Quadratic => half_z * r * r,
    };
    let y_m = Dual::constant(unit.y_magnetizing());
    let series_p = [[one, z_p], [zero, one]];
    let ideal = [[r, zero], [zero, r.inv()]];
    let shunt = [[one, zero], [y_m, one]];
    let series_s = [[one, half_z], [zero, one]];
    mat_mul(&mat_mul(&mat_mul(&series_p, &ideal), &shunt), &series_s)
}

/// π admittances (series, primary shunt, secondary shunt) with derivatives
/// following `r`.
fn pi_dual(unit: &TransformerUnit, r: Dual, law: ImpedanceLaw) -> Result<[Dual; 3]> {
    if r.v.norm() == 0.0 {
        return Err(Error::singular("turn ratio is zero"));
    }
    let m = chain_abcd(unit, r, law);
    let one = Dual::constant(Phasor::ONE);
    let y_sr = m[0][1].inv();
    let y_ss = (m[0][0] - one) * y_sr;
    let y_sp = (m[1][1] - one) * y_sr;
    if !(y_sr.v.is_finite() && y_ss.v.is_finite() && y_sp.v.is_finite()) {
        return Err(Error::singular("transformer chain has no π equivalent"));
    }
    Ok([y_sr, y_sp, y_ss])
}

/// π model of one unit at a (possibly fractional) turn ratio.
pub fn pi_at_ratio(unit: &TransformerUnit, r: f64, law: ImpedanceLaw) -> Result<PiModel> {
    let [y_sr, y_sp, y_ss] = pi_dual(unit, Dual::constant(Phasor::real(r)), law)?;
    Ok(PiModel {
        y_series: y_sr.v,
        y_shunt_primary: y_sp.v,
        y_shunt_secondary: y_ss.v,
    })
}

/// π model of one unit at an integer tap position.
pub fn transformer_pi(unit: &TransformerUnit, tap: i32, law: ImpedanceLaw) -> Result<PiModel> {
    let r = unit.turn_ratio(tap)?;
    pi_at_ratio(unit, r, law)
}

/// Parallel combination: each branch is combined by admittance addition.
pub fn aggregate_parallel(models: &[PiModel]) -> Result<PiModel> {
    if models.is_empty() {
        return Err(Error::domain("cannot aggregate an empty transformer bank"));
    }
    Ok(models.iter().fold(
        PiModel {
            y_series: Phasor::ZERO,
            y_shunt_primary: Phasor::ZERO,
            y_shunt_secondary: Phasor::ZERO,
        },
        |acc, m| PiModel {
            y_series: acc.y_series + m.y_series,
            y_shunt_primary: acc.y_shunt_primary + m.y_shunt_primary,
            y_shunt_secondary: acc.y_shunt_secondary + m.y_shunt_secondary,
        },
    ))
}

/// `T` such that `(V_p, I_p) = T (V_s, I_s)`, with `I_s` leaving the
/// secondary terminal.
pub fn transmission_matrix(pi: &PiModel) -> Result<[[Phasor; 2]; 2]> {
    if !(pi.y_shunt_primary.is_finite() && pi.y_shunt_secondary.is_finite()) {
        return Err(Error::singular("zero shunt impedance in π model"));
    }
    if pi.y_series.norm_sqr() == 0.0 || !pi.y_series.is_finite() {
        return Err(Error::singular("π series branch is open or undefined"));
    }
    let z_sr = pi.y_series.inv();
    let y_s = pi.y_shunt_secondary;
    let y_p = pi.y_shunt_primary;
    Ok(transmission_from(z_sr, y_p, y_s))
}

fn transmission_from<T>(z_sr: T, y_p: T, y_s: T) -> [[T; 2]; 2]
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Mul<Output = T> + From<Phasor>,
{
    let one: T = Phasor::ONE.into();
    [
        [one + z_sr * y_s, z_sr],
        [y_s + y_p + z_sr * y_s * y_p, one + z_sr * y_p],
    ]
}

/// A bank of parallel OLTC transformers sharing the upstream interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerBank {
    pub units: Vec<TransformerUnit>,
    #[serde(default)]
    pub law: ImpedanceLaw,
}

/// `I = C V + D V_th` at the secondary bus, plus derivatives with respect to
/// each unit's (continuous) tap position.
#[derive(Debug, Clone, PartialEq)]
pub struct OltcMaps {
    pub c: Phasor,
    pub d: Phasor,
    pub dc_dtap: Vec<Phasor>,
    pub dd_dtap: Vec<Phasor>,
}

impl OltcMaps {
    /// Current injected into the secondary bus.
    pub fn injection(&self, v_secondary: Phasor, v_th: f64) -> Phasor {
        self.c * v_secondary + self.d.scale(v_th)
    }

    /// The 2x2 block `dI/dV` (stacked real form).
    pub fn a_block(&self) -> [[f64; 2]; 2] {
        self.c.as_block()
    }

    /// Column `t` of the `dI/dtap` block.
    pub fn b_column(&self, t: usize, v_secondary: Phasor, v_th: f64) -> [f64; 2] {
        let di = self.dc_dtap[t] * v_secondary + self.dd_dtap[t].scale(v_th);
        [di.x, di.y]
    }
}

impl TransformerBank {
    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::validation("transformer bank is empty"));
        }
        self.units.iter().try_for_each(TransformerUnit::validate)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn check_taps(&self, taps: &[f64]) -> Result<()> {
        if taps.len() != self.units.len() {
            return Err(Error::domain(format!(
                "expected {} taps, got {}",
                self.units.len(),
                taps.len()
            )));
        }
        Ok(())
    }

    /// Aggregated π model at (continuous) tap positions.
    pub fn pi(&self, taps: &[f64]) -> Result<PiModel> {
        self.check_taps(taps)?;
        let models = self
            .units
            .iter()
            .zip(taps)
            .map(|(u, &t)| pi_at_ratio(u, turn_ratio(t, u.delta_u), self.law))
            .collect::<Result<Vec<_>>>()?;
        aggregate_parallel(&models)
    }

    /// Aggregated transmission matrix with its tap derivatives.
    pub fn transmission_with_derivatives(
        &self,
        taps: &[f64],
    ) -> Result<([[Phasor; 2]; 2], Vec<[[Phasor; 2]; 2]>)> {
        let (t, dt) = self.transmission_duals(taps, None)?;
        Ok((t, dt))
    }

    fn transmission_duals(
        &self,
        taps: &[f64],
        z_th: Option<Phasor>,
    ) -> Result<([[Phasor; 2]; 2], Vec<[[Phasor; 2]; 2]>)> {
        self.check_taps(taps)?;
        let n = self.units.len();
        let mut value = None;
        let mut derivs = Vec::with_capacity(n);
        for seed in 0..n {
            let mut agg = [Dual::constant(Phasor::ZERO); 3];
            for (t, (u, &tap)) in self.units.iter().zip(taps).enumerate() {
                let r = turn_ratio(tap, u.delta_u);
                let rd = if t == seed {
                    Dual {
                        v: Phasor::real(r),
                        d: Phasor::real(u.delta_u),
                    }
                } else {
                    Dual::constant(Phasor::real(r))
                };
                let branch = pi_dual(u, rd, self.law)?;
                for k in 0..3 {
                    agg[k] = agg[k] + branch[k];
                }
            }
            let [y_sr, y_sp, y_ss] = agg;
            if y_sr.v.norm_sqr() == 0.0 {
                return Err(Error::singular("aggregated series branch is open"));
            }
            let t = transmission_from(y_sr.inv(), y_sp, y_ss);
            let t = match z_th {
                None => t,
                Some(z) => {
                    // fold the Thevenin impedance into the first row
                    let z = Dual::constant(z);
                    [[t[0][0] + z * t[1][0], t[0][1] + z * t[1][1]], t[1]]
                }
            };
            if value.is_none() {
                value = Some([[t[0][0].v, t[0][1].v], [t[1][0].v, t[1][1].v]]);
            }
            derivs.push([[t[0][0].d, t[0][1].d], [t[1][0].d, t[1][1].d]]);
        }
        Ok((value.expect("bank is non-empty"), derivs))
    }

    /// Injection maps of the Thevenin source behind the aggregated π model.
    ///
    /// From `V_th = V_p + Z_th I_p` and `(V_p, I_p) = T (V_s, I_s)`:
    /// `I_s = (V_th - (T11 + Z_th T21) V_s) / (T12 + Z_th T22)`.
    pub fn injection_maps(&self, taps: &[f64], upstream: &UpstreamThevenin) -> Result<OltcMaps> {
        let (t, dt) = self.transmission_duals(taps, Some(upstream.z_th))?;
        let den = t[0][1];
        if den.norm() < 1e-14 {
            return Err(Error::singular("upstream circuit has zero series impedance"));
        }
        let d = den.inv();
        let c = -(t[0][0] * d);
        let mut dc_dtap = Vec::with_capacity(dt.len());
        let mut dd_dtap = Vec::with_capacity(dt.len());
        for dtt in &dt {
            let dd = -(dtt[0][1] * d * d);
            dc_dtap.push(-(dtt[0][0] * d) - t[0][0] * dd);
            dd_dtap.push(dd);
        }
        Ok(OltcMaps {
            c,
            d,
            dc_dtap,
            dd_dtap,
        })
    }
}

/// Upstream grid seen at the transformer primary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpstreamThevenin {
    /// `|V_th|`; the Thevenin source is the angle reference.
    pub v_th: f64,
    pub z_th: Phasor,
}

impl UpstreamThevenin {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_th > 0.0) {
            return Err(Error::validation("Thevenin voltage must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn table1_unit1() -> TransformerUnit {
        TransformerUnit {
            capacity_mva: 3.0,
            x_series: 0.100,
            r_series: 0.006,
            x_magnetizing: 390.0,
            r_core: 400.0,
            tap_min: -10,
            tap_max: 10,
            delta_u: 0.01,
        }
    }

    fn table1_unit2() -> TransformerUnit {
        TransformerUnit {
            capacity_mva: 3.0,
            x_series: 0.110,
            r_series: 0.006,
            x_magnetizing: 380.0,
            r_core: 400.0,
            tap_min: -12,
            tap_max: 12,
            delta_u: 0.01,
        }
    }

    /// Independent chain model written with plain phasor products.
    fn chain(unit: &TransformerUnit, r: f64) -> [[Phasor; 2]; 2] {
        let zp = unit.z_series_nominal().scale(0.5 * r);
        let zs = unit.z_series_nominal().scale(0.5);
        let ym = unit.y_magnetizing();
        let mul = |a: [[Phasor; 2]; 2], b: [[Phasor; 2]; 2]| {
            [
                [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
                [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
            ]
        };
        let o = Phasor::ONE;
        let z = Phasor::ZERO;
        let m = mul([[o, zp], [z, o]], [[Phasor::real(r), z], [z, Phasor::real(1.0 / r)]]);
        let m = mul(m, [[o, z], [ym, o]]);
        mul(m, [[o, zs], [z, o]])
    }

    #[test]
    fn turn_ratio_examples() {
        let u = table1_unit1();
        assert_eq!(u.turn_ratio(0).unwrap(), 1.0);
        assert!((u.turn_ratio(10).unwrap() - 1.10).abs() < 1e-15);
        assert!((turn_ratio(-12.0, 0.01) - 0.88).abs() < 1e-15);
        assert!(matches!(u.turn_ratio(11), Err(Error::Domain(_))));
    }

    #[test]
    fn pi_terminal_behaviour_matches_chain() {
        let u = table1_unit1();
        for tap in [0, 7, -9] {
            let r = u.turn_ratio(tap).unwrap();
            let pi = transformer_pi(&u, tap, ImpedanceLaw::Linear).unwrap();
            let t = transmission_matrix(&pi).unwrap();
            let m = chain(&u, r);
            let excitations = [
                (Phasor::new(1.0, 0.1), Phasor::new(0.3, -0.2)),
                (Phasor::new(0.95, -0.05), Phasor::new(-0.1, 0.4)),
                (Phasor::new(1.02, 0.0), Phasor::new(0.0, 0.0)),
            ];
            for (vs, is) in excitations {
                let vp_pi = t[0][0] * vs + t[0][1] * is;
                let ip_pi = t[1][0] * vs + t[1][1] * is;
                let vp_ch = m[0][0] * vs + m[0][1] * is;
                let ip_ch = m[1][0] * vs + m[1][1] * is;
                assert!((vp_pi - vp_ch).norm() < 1e-12);
                assert!((ip_pi - ip_ch).norm() < 1e-12);
            }
        }
    }

    fn core_loss_open_secondary(u: &TransformerUnit, tap: i32) -> f64 {
        // open secondary: I_s = 0, V_p = 1 -> V_s = 1 / A; the core branch sees V_s
        let m = chain(u, u.turn_ratio(tap).unwrap());
        let vs = Phasor::ONE / m[0][0];
        vs.norm_sqr() / u.r_core
    }

    #[test]
    fn core_loss_follows_inverse_square_of_ratio() {
        let u = table1_unit1();
        let p0 = core_loss_open_secondary(&u, 0);
        assert!((p0 - 0.0025).abs() / 0.0025 < 1e-3, "{p0}");
        let p10 = core_loss_open_secondary(&u, 10);
        assert!((p10 - 0.0025 / 1.21).abs() / 0.002066 < 1e-3, "{p10}");
        // the π model delivers the same active power into the open circuit
        let pi = transformer_pi(&u, 10, ImpedanceLaw::Linear).unwrap();
        let t = transmission_matrix(&pi).unwrap();
        let vs = Phasor::ONE / t[0][0];
        let ip = t[1][0] * vs;
        let p_in = (Phasor::ONE * ip.conj()).x;
        let copper = (ip.norm_sqr()) * (0.5 * 1.1 * u.r_series);
        assert!((p_in - copper - p10).abs() < 1e-12);
    }

    #[test]
    fn core_loss_decreasing_in_ratio() {
        let u = table1_unit1();
        let loss = |r: f64| {
            let m = chain(&u, r);
            (Phasor::ONE / m[0][0]).norm_sqr() / u.r_core
        };
        let mut prev = loss(0.88);
        let mut r = 0.88;
        while r < 1.12 {
            r += 0.005;
            let l = loss(r);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn aggregation_rules() {
        let a = transformer_pi(&table1_unit1(), 0, ImpedanceLaw::Linear).unwrap();
        let b = transformer_pi(&table1_unit2(), 0, ImpedanceLaw::Linear).unwrap();
        assert_eq!(aggregate_parallel(&[a]).unwrap(), a);
        let aa = aggregate_parallel(&[a, a]).unwrap();
        assert!((aa.z_series() - a.z_series().scale(0.5)).norm() < 1e-15);
        assert!((aa.z_shunt_primary() - a.z_shunt_primary().scale(0.5)).norm() < 1e-9);
        let ab = aggregate_parallel(&[a, b]).unwrap();
        let ba = aggregate_parallel(&[b, a]).unwrap();
        let par = |x: Phasor, y: Phasor| (x * y) / (x + y);
        assert!((ab.z_series() - par(a.z_series(), b.z_series())).norm() < 1e-14);
        assert!(
            (ab.z_shunt_secondary() - par(a.z_shunt_secondary(), b.z_shunt_secondary())).norm()
                < 1e-9 * ab.z_shunt_secondary().norm()
        );
        assert!((ab.y_series - ba.y_series).norm() < 1e-15);
        assert!(matches!(aggregate_parallel(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn transmission_identity_and_reciprocity() {
        let lossless = PiModel {
            y_series: Phasor::real(1e15),
            y_shunt_primary: Phasor::ZERO,
            y_shunt_secondary: Phasor::ZERO,
        };
        let t = transmission_matrix(&lossless).unwrap();
        assert!((t[0][0] - Phasor::ONE).norm() < 1e-14);
        assert!(t[0][1].norm() < 1e-14);
        assert!(t[1][0].norm() < 1e-14);
        assert!((t[1][1] - Phasor::ONE).norm() < 1e-14);

        let u = table1_unit1();
        let t = transmission_matrix(&transformer_pi(&u, 0, ImpedanceLaw::Linear).unwrap()).unwrap();
        let det = t[0][0] * t[1][1] - t[0][1] * t[1][0];
        let m = chain(&u, 1.0);
        let det_chain = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        assert!((det - det_chain).norm() < 1e-12);
        assert!((det - Phasor::ONE).norm() < 1e-12);

        let bad = PiModel {
            y_shunt_primary: Phasor::real(f64::INFINITY),
            ..lossless
        };
        assert!(matches!(transmission_matrix(&bad), Err(Error::Singular(_))));
    }

    #[test]
    fn transmission_tap_derivatives_match_central_differences() {
        let bank = TransformerBank {
            units: vec![table1_unit1(), table1_unit2()],
            law: ImpedanceLaw::Linear,
        };
        let taps = [2.0, -3.0];
        let (_, dt) = bank.transmission_with_derivatives(&taps).unwrap();
        let central = |k: usize, h: f64| {
            let mut hi = taps;
            let mut lo = taps;
            hi[k] += h;
            lo[k] -= h;
            let th = transmission_matrix(&bank.pi(&hi).unwrap()).unwrap();
            let tl = transmission_matrix(&bank.pi(&lo).unwrap()).unwrap();
            let mut d = [[Phasor::ZERO; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    d[i][j] = (th[i][j] - tl[i][j]).scale(0.5 / h);
                }
            }
            d
        };
        for k in 0..2 {
            // one-tap and two-tap differences combined by Richardson extrapolation
            let d1 = central(k, 1.0);
            let d2 = central(k, 2.0);
            for i in 0..2 {
                for j in 0..2 {
                    let fd = (d1[i][j].scale(4.0) - d2[i][j]).scale(1.0 / 3.0);
                    let scale = dt[k][i][j].norm().max(1e-12);
                    assert!((fd - dt[k][i][j]).norm() / scale < 1e-6, "{i}{j}");
                }
            }
        }
    }

    #[test]
    fn oltc_maps_stiff_source_draws_shunt_current() {
        let bank = TransformerBank {
            units: vec![table1_unit1()],
            law: ImpedanceLaw::Linear,
        };
        let up = UpstreamThevenin {
            v_th: 1.0,
            z_th: Phasor::ZERO,
        };
        let maps = bank.injection_maps(&[0.0], &up).unwrap();
        let pi = bank.pi(&[0.0]).unwrap();
        let i = maps.injection(Phasor::ONE, 1.0);
        assert!((i + pi.y_shunt_secondary).norm() < 1e-12);

        let up2 = UpstreamThevenin { v_th: 2.0, ..up };
        let d1 = maps.d.scale(up.v_th);
        let d2 = bank.injection_maps(&[0.0], &up2).unwrap().d.scale(up2.v_th);
        assert!((d2 - d1.scale(2.0)).norm() < 1e-12);
    }

    #[test]
    fn oltc_tap_blocks_match_finite_differences() {
        let bank = TransformerBank {
            units: vec![table1_unit1(), table1_unit2()],
            law: ImpedanceLaw::Quadratic,
        };
        let up = UpstreamThevenin {
            v_th: 0.98,
            z_th: Phasor::new(0.02, 0.1),
        };
        let taps = [1.0, 4.0];
        let vs = Phasor::new(0.97, -0.03);
        let maps = bank.injection_maps(&taps, &up).unwrap();
        let h = 1e-4;
        for t in 0..2 {
            let mut hi = taps;
            let mut lo = taps;
            hi[t] += h;
            lo[t] -= h;
            let ih = bank.injection_maps(&hi, &up).unwrap().injection(vs, up.v_th);
            let il = bank.injection_maps(&lo, &up).unwrap().injection(vs, up.v_th);
            let fd = (ih - il).scale(0.5 / h);
            let b = maps.b_column(t, vs, up.v_th);
            let an = Phasor::new(b[0], b[1]);
            assert!((fd - an).norm() / an.norm() < 1e-6);
        }
        // A block: injection is affine in V_s
        let dv = Phasor::new(1e-3, -2e-3);
        let di = maps.injection(vs + dv, up.v_th) - maps.injection(vs, up.v_th);
        let a = maps.a_block();
        let lin = Phasor::new(a[0][0] * dv.x + a[0][1] * dv.y, a[1][0] * dv.x + a[1][1] * dv.y);
        assert!((di - lin).norm() < 1e-12);
    }
}
