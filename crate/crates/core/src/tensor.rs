//! Fixed-size 3×2 / 3×3 matrices and 3-vectors.
//!
//! Row index is the spatial component (1..3), column index the derivative
//! direction. A [`Mat3x2`] holds the in-plane block `(∂₁u | ∂₂u)` and
//! [`compose`] appends the transverse column.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat3x2(pub [[f64; 2]; 3]);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat3x3(pub [[f64; 3]; 3]);

/// `(ξ̄ | z)`: first two columns from `xi_bar`, third column `z`.
pub fn compose(xi_bar: &Mat3x2, z: &Vec3) -> Mat3x3 {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[0] = xi_bar.0[i][0];
        row[1] = xi_bar.0[i][1];
        row[2] = z.0[i];
    }
    Mat3x3(m)
}

/// Frobenius norm for any of the fixed-size types.
pub fn frobenius<T: Frobenius>(m: &T) -> f64 {
    m.norm_sq().sqrt()
}

pub trait Frobenius {
    fn norm_sq(&self) -> f64;
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Vec3([a, b, c])
    }

    pub fn e(i: usize) -> Self {
        let mut v = [0.0; 3];
        v[i] = 1.0;
        Vec3(v)
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Mat3x2 {
    pub const ZERO: Mat3x2 = Mat3x2([[0.0; 2]; 3]);

    /// Planar embedding `((1,0),(0,1),(0,0))`, the in-plane gradient of `(x_α, 0)`.
    pub const PLANAR: Mat3x2 = Mat3x2([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);

    /// Rank-one matrix `eᵢ ⊗ eⱼ` (row `i`, column `j`, zero-based).
    pub fn unit(i: usize, j: usize) -> Self {
        let mut m = Self::ZERO;
        m.0[i][j] = 1.0;
        m
    }

    pub fn from_flat(v: [f64; 6]) -> Self {
        Mat3x2([[v[0], v[1]], [v[2], v[3]], [v[4], v[5]]])
    }

    pub fn to_flat(&self) -> [f64; 6] {
        let m = &self.0;
        [m[0][0], m[0][1], m[1][0], m[1][1], m[2][0], m[2][1]]
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn dot(&self, other: &Mat3x2) -> f64 {
        self.to_flat().iter().zip(other.to_flat()).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

impl Mat3x3 {
    pub const ZERO: Mat3x3 = Mat3x3([[0.0; 3]; 3]);
    pub const IDENTITY: Mat3x3 = Mat3x3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    /// The in-plane block (first two columns).
    pub fn planar_block(&self) -> Mat3x2 {
        let m = &self.0;
        Mat3x2([[m[0][0], m[0][1]], [m[1][0], m[1][1]], [m[2][0], m[2][1]]])
    }

    pub fn dot(&self, other: &Mat3x3) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.0[i][j] * other.0[i][j];
            }
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

impl Frobenius for Vec3 {
    fn norm_sq(&self) -> f64 {
        self.dot(self)
    }
}

impl Frobenius for Mat3x2 {
    fn norm_sq(&self) -> f64 {
        self.dot(self)
    }
}

impl Frobenius for Mat3x3 {
    fn norm_sq(&self) -> f64 {
        self.dot(self)
    }
}

macro_rules! impl_linear {
    ($t:ty, $($idx:tt)*) => {
        impl Add for $t {
            type Output = $t;
            fn add(mut self, rhs: $t) -> $t {
                self += rhs;
                self
            }
        }

        impl Sub for $t {
            type Output = $t;
            fn sub(mut self, rhs: $t) -> $t {
                self -= rhs;
                self
            }
        }

        impl AddAssign for $t {
            fn add_assign(&mut self, rhs: $t) {
                for (a, b) in self.0.iter_mut()$($idx)*.zip(rhs.0.iter()$($idx)*) {
                    *a += b;
                }
            }
        }

        impl SubAssign for $t {
            fn sub_assign(&mut self, rhs: $t) {
                for (a, b) in self.0.iter_mut()$($idx)*.zip(rhs.0.iter()$($idx)*) {
                    *a -= b;
                }
            }
        }

        impl Mul<$t> for f64 {
            type Output = $t;
            fn mul(self, mut rhs: $t) -> $t {
                for a in rhs.0.iter_mut()$($idx)* {
                    *a *= self;
                }
                rhs
            }
        }

        impl Neg for $t {
            type Output = $t;
            fn neg(self) -> $t {
                -1.0 * self
            }
        }
    };
}

impl_linear!(Vec3,);
impl_linear!(Mat3x2, .flatten());
impl_linear!(Mat3x3, .flatten());

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vec3 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Index<(usize, usize)> for Mat3x2 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat3x2 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl Index<(usize, usize)> for Mat3x3 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat3x3 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compose_zero_is_zero() {
        assert_eq!(compose(&Mat3x2::ZERO, &Vec3::ZERO), Mat3x3::ZERO);
    }

    #[test]
    fn compose_planar_with_e3_is_identity() {
        assert_eq!(compose(&Mat3x2::PLANAR, &Vec3::e(2)), Mat3x3::IDENTITY);
    }

    #[test]
    fn norm_splits() {
        let xi = Mat3x2::PLANAR;
        let z = Vec3::new(0.0, 0.0, 1.0);
        assert_eq!(xi.norm_sq(), 2.0);
        assert!((frobenius(&compose(&xi, &z)).powi(2) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn frobenius_values() {
        assert_eq!(frobenius(&Mat3x3::ZERO), 0.0);
        assert_eq!(frobenius(&Mat3x3::IDENTITY), 3f64.sqrt());
        assert_eq!(frobenius(&Mat3x2::PLANAR), 2f64.sqrt());
    }

    fn mat32() -> impl Strategy<Value = Mat3x2> {
        prop::array::uniform6(-10.0f64..10.0).prop_map(Mat3x2::from_flat)
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-10.0f64..10.0).prop_map(Vec3)
    }

    proptest! {
        #[test]
        fn compose_norm_is_pythagorean(xi in mat32(), z in vec3()) {
            let lhs = frobenius(&compose(&xi, &z)).powi(2);
            let rhs = frobenius(&xi).powi(2) + frobenius(&z).powi(2);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn compose_is_linear(
            x1 in mat32(), x2 in mat32(), z1 in vec3(), z2 in vec3(),
            a in -3.0f64..3.0, b in -3.0f64..3.0,
        ) {
            let lhs = compose(&(a * x1 + b * x2), &(a * z1 + b * z2));
            let rhs = a * compose(&x1, &z1) + b * compose(&x2, &z2);
            prop_assert!(frobenius(&(lhs - rhs)) <= 1e-12 * (1.0 + frobenius(&lhs)));
        }

        #[test]
        fn triangle_inequality(a in mat32(), b in mat32()) {
            prop_assert!(frobenius(&(a + b)) <= frobenius(&a) + frobenius(&b) + 1e-12);
        }
    }
}
