//! Rectangular phasors and forward-mode duals over them.
//!
//! All complex quantities are carried as explicit `(x, y)` pairs so that the
//! stacked real forms used by the perturbed model can be read off directly.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A complex quantity in rectangular form (per unit).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Phasor {
    pub x: f64,
    pub y: f64,
}

impl Phasor {
    pub const ZERO: Phasor = Phasor { x: 0.0, y: 0.0 };
    pub const ONE: Phasor = Phasor { x: 1.0, y: 0.0 };
    pub const J: Phasor = Phasor { x: 0.0, y: 1.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub const fn real(x: f64) -> Self {
        Self { x, y: 0.0 }
    }

    pub fn from_polar(magnitude: f64, angle: f64) -> Self {
        Self {
            x: magnitude * angle.cos(),
            y: magnitude * angle.sin(),
        }
    }

    pub fn conj(self) -> Self {
        Self { x: self.x, y: -self.y }
    }

    pub fn norm_sqr(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Angle in radians; `None` for the zero phasor.
    pub fn angle(self) -> Option<f64> {
        if self.norm_sqr() > 0.0 {
            Some(self.y.atan2(self.x))
        } else {
            None
        }
    }

    pub fn inv(self) -> Self {
        let d = self.norm_sqr();
        Self {
            x: self.x / d,
            y: -self.y / d,
        }
    }

    pub fn scale(self, k: f64) -> Self {
        Self {
            x: self.x * k,
            y: self.y * k,
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// The 2x2 real matrix `[[x, -y], [y, x]]` acting on `(v_x, v_y)`.
    pub fn as_block(self) -> [[f64; 2]; 2] {
        [[self.x, -self.y], [self.y, self.x]]
    }
}

impl Add for Phasor {
    type Output = Phasor;
    fn add(self, o: Phasor) -> Phasor {
        Phasor::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Phasor {
    fn add_assign(&mut self, o: Phasor) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Phasor {
    type Output = Phasor;
    fn sub(self, o: Phasor) -> Phasor {
        Phasor::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Phasor {
    fn sub_assign(&mut self, o: Phasor) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul for Phasor {
    type Output = Phasor;
    fn mul(self, o: Phasor) -> Phasor {
        Phasor::new(self.x * o.x - self.y * o.y, self.x * o.y + self.y * o.x)
    }
}

impl Mul<f64> for Phasor {
    type Output = Phasor;
    fn mul(self, k: f64) -> Phasor {
        self.scale(k)
    }
}

impl Div for Phasor {
    type Output = Phasor;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Phasor) -> Phasor {
        self * o.inv()
    }
}

impl Neg for Phasor {
    type Output = Phasor;
    fn neg(self) -> Phasor {
        Phasor::new(-self.x, -self.y)
    }
}

/// Value and first derivative of a complex function of one real parameter.
///
/// Used to differentiate the transformer chain with respect to the turn
/// ratio without hand-expanding every quotient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: Phasor,
    pub d: Phasor,
}

impl Dual {
    pub const fn constant(v: Phasor) -> Self {
        Self { v, d: Phasor::ZERO }
    }

    pub const fn variable(v: Phasor) -> Self {
        Self { v, d: Phasor::ONE }
    }

    pub fn inv(self) -> Self {
        let iv = self.v.inv();
        Self {
            v: iv,
            d: -(self.d * iv * iv),
        }
    }
}

impl From<Phasor> for Dual {
    fn from(v: Phasor) -> Self {
        Dual::constant(v)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Dual) -> Dual {
        self * o.inv()
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual {
            v: -self.v,
            d: -self.d,
        }
    }
}
