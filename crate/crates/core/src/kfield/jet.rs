//! Truncated Taylor jets in the five ambient coordinates.
//!
//! A jet carries the value, gradient, Hessian and (optionally) the third
//! derivative tensor of a scalar function of `x1..x5`. Arithmetic propagates
//! all of them exactly; third-order terms are skipped when `order < 3`.

pub(crate) const N: usize = 5;

pub type Grad = [f64; N];
pub type Hess = [[f64; N]; N];
pub type Third = [[[f64; N]; N]; N];

#[derive(Debug, Clone)]
pub struct Jet {
    pub order: u8,
    pub v: f64,
    pub g: Grad,
    pub h: Hess,
    pub t: Third,
}

impl Jet {
    pub fn constant(v: f64, order: u8) -> Self {
        Self {
            order,
            v,
            g: [0.0; N],
            h: [[0.0; N]; N],
            t: [[[0.0; N]; N]; N],
        }
    }

    pub fn variable(i: usize, v: f64, order: u8) -> Self {
        let mut j = Self::constant(v, order);
        j.g[i] = 1.0;
        j
    }

    fn third(&self) -> bool {
        self.order >= 3
    }

    pub fn add(&self, o: &Jet) -> Jet {
        self.lin(1.0, o, 1.0)
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        self.lin(1.0, o, -1.0)
    }

    pub fn neg(&self) -> Jet {
        self.lin(-1.0, self, 0.0)
    }

    fn lin(&self, a: f64, o: &Jet, b: f64) -> Jet {
        let mut r = Jet::constant(a * self.v + b * o.v, self.order);
        for i in 0..N {
            r.g[i] = a * self.g[i] + b * o.g[i];
            for j in 0..N {
                r.h[i][j] = a * self.h[i][j] + b * o.h[i][j];
                if self.third() {
                    for k in 0..N {
                        r.t[i][j][k] = a * self.t[i][j][k] + b * o.t[i][j][k];
                    }
                }
            }
        }
        r
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let (u, w) = (self, o);
        let mut r = Jet::constant(u.v * w.v, self.order);
        for i in 0..N {
            r.g[i] = u.g[i] * w.v + u.v * w.g[i];
            for j in 0..N {
                r.h[i][j] = u.h[i][j] * w.v + u.g[i] * w.g[j] + u.g[j] * w.g[i] + u.v * w.h[i][j];
                if self.third() {
                    for k in 0..N {
                        r.t[i][j][k] = u.t[i][j][k] * w.v
                            + u.h[i][j] * w.g[k]
                            + u.h[i][k] * w.g[j]
                            + u.h[j][k] * w.g[i]
                            + u.g[i] * w.h[j][k]
                            + u.g[j] * w.h[i][k]
                            + u.g[k] * w.h[i][j]
                            + u.v * w.t[i][j][k];
                    }
                }
            }
        }
        r
    }

    pub fn div(&self, o: &Jet) -> Jet {
        let x = o.v;
        self.mul(&o.compose([1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x), -6.0 / (x * x * x * x)]))
    }

    /// `f(self)` given `f, f', f'', f'''` at the value of `self`.
    pub fn compose(&self, f: [f64; 4]) -> Jet {
        let u = self;
        let mut r = Jet::constant(f[0], self.order);
        for i in 0..N {
            r.g[i] = f[1] * u.g[i];
            for j in 0..N {
                r.h[i][j] = f[2] * u.g[i] * u.g[j] + f[1] * u.h[i][j];
                if self.third() {
                    for k in 0..N {
                        r.t[i][j][k] = f[3] * u.g[i] * u.g[j] * u.g[k]
                            + f[2] * (u.h[i][j] * u.g[k] + u.h[i][k] * u.g[j] + u.h[j][k] * u.g[i])
                            + f[1] * u.t[i][j][k];
                    }
                }
            }
        }
        r
    }

    pub fn powi(&self, n: i32) -> Jet {
        let x = self.v;
        let mut f = [0.0; 4];
        let mut coef = 1.0;
        for (k, fk) in f.iter_mut().enumerate() {
            *fk = if coef == 0.0 { 0.0 } else { coef * x.powi(n - k as i32) };
            coef *= (n - k as i32) as f64;
        }
        self.compose(f)
    }

    pub fn exp(&self) -> Jet {
        let e = self.v.exp();
        self.compose([e; 4])
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.compose([s, c, -s, -c])
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.compose([c, -s, -c, s])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(x: [f64; 5]) -> Vec<Jet> {
        (0..5).map(|i| Jet::variable(i, x[i], 3)).collect()
    }

    #[test]
    fn product_rule_third_order() {
        // f = x1^2 x2: f_112 = 2
        let x = vars([0.3, -0.7, 0.1, 0.2, 0.5]);
        let f = x[0].mul(&x[0]).mul(&x[1]);
        assert!((f.t[0][0][1] - 2.0).abs() < 1e-15);
        assert!((f.t[1][0][0] - 2.0).abs() < 1e-15);
        assert!((f.h[0][1] - 2.0 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn quotient_and_powers() {
        let x = vars([0.3, -0.7, 0.1, 0.2, 0.5]);
        let f = Jet::constant(1.0, 3).div(&x[4]);
        let g = x[4].powi(-1);
        assert!((f.v - 2.0).abs() < 1e-15);
        assert!((f.t[4][4][4] - g.t[4][4][4]).abs() < 1e-9);
        assert!((f.t[4][4][4] + 6.0 / 0.5f64.powi(4)).abs() < 1e-9);
        let z = Jet::variable(0, 0.0, 3).powi(2);
        assert!(z.t.iter().flatten().flatten().all(|v| v.is_finite()));
        assert_eq!(z.h[0][0], 2.0);
    }

    #[test]
    fn transcendental() {
        let x = vars([0.4, 0.0, 0.0, 0.0, 0.0]);
        let s = x[0].sin();
        let c = x[0].cos();
        let e = x[0].exp();
        assert!((s.t[0][0][0] + 0.4f64.cos()).abs() < 1e-15);
        assert!((c.h[0][0] + 0.4f64.cos()).abs() < 1e-15);
        assert!((e.t[0][0][0] - 0.4f64.exp()).abs() < 1e-15);
    }
}
