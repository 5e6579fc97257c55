//! Voltage-dependent loads (ZIP reduced to ZP).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phasor::Phasor;

use super::devices::pq_blocks;

fn default_v0() -> f64 {
    1.0
}

/// `P_d = P_d0 (zeta_p v^2 + 1 - zeta_p)` with `v = |V| / V0`, likewise for Q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZpLoad {
    pub bus: usize,
    pub p_d0: f64,
    pub q_d0: f64,
    pub zeta_p: f64,
    pub zeta_q: f64,
    #[serde(default = "default_v0")]
    pub v0: f64,
}

/// ZIP shares of one power component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipShares {
    pub zeta: f64,
    pub mu: f64,
    pub kappa: f64,
}

impl ZipShares {
    /// `(zeta', kappa')` of the equivalent ZP model.
    pub fn to_zp(self) -> Result<(f64, f64)> {
        let sum = self.zeta + self.mu + self.kappa;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("ZIP shares sum to {sum}, expected 1")));
        }
        Ok((self.zeta + self.mu / 2.0, self.kappa + self.mu / 2.0))
    }

    /// `P_d / P_d0` at `v = |V| / V0`.
    pub fn power_ratio(self, v: f64) -> f64 {
        self.zeta * v * v + self.mu * v + self.kappa
    }
}

/// Z-shares `(zeta'_p, zeta'_q)` of the ZP model equivalent to two ZIP triples.
pub fn zip_to_zp(p: ZipShares, q: ZipShares) -> Result<(f64, f64)> {
    Ok((p.to_zp()?.0, q.to_zp()?.0))
}

impl ZpLoad {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_d0 >= 0.0) {
            return Err(Error::validation("load p_d0 must be non-negative"));
        }
        if !(self.v0 > 0.0) {
            return Err(Error::validation("load reference voltage must be positive"));
        }
        for z in [self.zeta_p, self.zeta_q] {
            if !(0.0..=1.0).contains(&z) {
                return Err(Error::validation(format!("load Z-share {z} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// `(P_d, Q_d)` at terminal voltage magnitude `|V|`.
    pub fn power(&self, v_magnitude: f64) -> Result<(f64, f64)> {
        if !(v_magnitude > 0.0) {
            return Err(Error::domain("load voltage magnitude must be positive"));
        }
        Ok(self.power_at_sq(v_magnitude * v_magnitude))
    }

    pub(crate) fn power_at_sq(&self, v_sq: f64) -> (f64, f64) {
        let u = v_sq / (self.v0 * self.v0);
        (
            self.p_d0 * (self.zeta_p * u + 1.0 - self.zeta_p),
            self.q_d0 * (self.zeta_q * u + 1.0 - self.zeta_q),
        )
    }

    /// Current injected into the bus (a load withdraws power).
    pub fn injection(&self, v: Phasor) -> Phasor {
        let (p, q) = self.power_at_sq(v.norm_sqr());
        -(Phasor::new(p, q).conj() / v.conj())
    }

    /// `dI/dV` block of the injected current.
    pub fn a_block(&self, v: Phasor) -> [[f64; 2]; 2] {
        let i = self.injection(v);
        let k = 2.0 / (self.v0 * self.v0);
        let kp = -k * self.zeta_p * self.p_d0;
        let kq = -k * self.zeta_q * self.q_d0;
        pq_blocks(v, i, [[kp * v.x, kp * v.y], [kq * v.x, kq * v.y]]).0
    }

    /// The same load with every Z-share set to zero.
    pub fn constant_power(&self) -> ZpLoad {
        ZpLoad {
            zeta_p: 0.0,
            zeta_q: 0.0,
            ..self.clone()
        }
    }

    pub fn scaled(&self, multiplier: f64) -> ZpLoad {
        ZpLoad {
            p_d0: self.p_d0 * multiplier,
            q_d0: self.q_d0 * multiplier,
            ..self.clone()
        }
    }
}

/// Standalone evaluation of the ZP law.
pub fn zp_load_power(load: &ZpLoad, v_magnitude: f64) -> Result<(f64, f64)> {
    load.power(v_magnitude)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load(zp: f64, zq: f64) -> ZpLoad {
        ZpLoad {
            bus: 0,
            p_d0: 1.0,
            q_d0: 0.4,
            zeta_p: zp,
            zeta_q: zq,
            v0: 1.0,
        }
    }

    #[test]
    fn zip_conversion_examples() {
        let p = ZipShares { zeta: 0.4, mu: 0.3, kappa: 0.3 };
        let (z, k) = p.to_zp().unwrap();
        assert!((z - 0.55).abs() < 1e-15 && (k - 0.45).abs() < 1e-15);
        let no_i = ZipShares { zeta: 0.2, mu: 0.0, kappa: 0.8 };
        assert_eq!(no_i.to_zp().unwrap(), (0.2, 0.8));
        let bad = ZipShares { zeta: 0.5, mu: 0.3, kappa: 0.3 };
        assert!(matches!(bad.to_zp(), Err(Error::Validation(_))));
    }

    #[test]
    fn zip_zp_mismatch_bound() {
        // exact gap is mu/2 (v - 1)^2; sweep the typical band
        for mu in [0.1, 0.3, 0.6, 1.0] {
            let zip = ZipShares { zeta: (1.0 - mu) / 2.0, mu, kappa: (1.0 - mu) / 2.0 };
            let (z, _) = zip.to_zp().unwrap();
            let l = load(z, z);
            for k in 0..=100 {
                let v = 0.95 + 0.001 * k as f64;
                let (p, _) = l.power(v).unwrap();
                let gap = (zip.power_ratio(v) - p).abs();
                assert!(gap <= 2.5 * mu * (1.0 - v).powi(2) + 1e-15);
            }
        }
    }

    #[test]
    fn zp_power_examples() {
        let l = load(1.0, 0.3);
        let (p, q) = l.power(1.0).unwrap();
        assert_eq!((p, q), (1.0, 0.4));
        let (p, _) = l.power(1.05).unwrap();
        assert!((p - 1.1025).abs() < 1e-12);
        let cp = load(0.0, 0.0);
        assert_eq!(cp.power(0.91).unwrap(), (1.0, 0.4));
        assert!(matches!(l.power(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn load_block_matches_finite_differences() {
        let l = load(0.55, 0.8);
        let v = Phasor::new(0.96, -0.07);
        let a = l.a_block(v);
        let h = 1e-6;
        for (k, dv) in [Phasor::new(h, 0.0), Phasor::new(0.0, h)].into_iter().enumerate() {
            let fd = (l.injection(v + dv) - l.injection(v - dv)).scale(0.5 / h);
            assert!((fd.x - a[0][k]).abs() < 1e-8);
            assert!((fd.y - a[1][k]).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_power_block_is_pure_pq_block() {
        let l = load(0.0, 0.0);
        let v = Phasor::new(1.02, 0.01);
        let i = l.injection(v);
        assert_eq!(l.a_block(v), pq_blocks(v, i, [[0.0; 2]; 2]).0);
    }

    proptest! {
        #[test]
        fn zp_power_monotone_in_voltage(z in 0.01f64..1.0, v1 in 0.8f64..1.2, dv in 1e-4f64..0.1) {
            let l = load(z, z);
            let (p1, q1) = l.power(v1).unwrap();
            let (p2, q2) = l.power(v1 + dv).unwrap();
            prop_assert!(p2 > p1 && q2 > q1);
        }

        #[test]
        fn zp_constant_power_is_flat(v in 0.8f64..1.2) {
            let l = load(0.0, 0.0);
            prop_assert_eq!(l.power(v).unwrap(), (1.0, 0.4));
        }
    }
}
