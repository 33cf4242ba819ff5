//! Small fixed-size linear algebra and scalar helpers.
//!
//! Scalar transcendental functions go through `libm` in every build so that
//! `std` and `no_std` configurations produce bit-identical results.

use core::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, Neg, Sub, SubAssign};

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn log10(x: f64) -> f64 {
    libm::log10(x)
}

pub const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
/// 1/sqrt(2*pi)
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (erf(x * FRAC_1_SQRT_2) + 1.0)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * exp(-0.5 * x * x)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        sqrt(self.norm_squared())
    }

    /// Unit vector, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 1e-300 && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    #[inline]
    pub fn outer(self, o: Vec3) -> Mat3 {
        Mat3::new([
            [self.x * o.x, self.x * o.y, self.x * o.z],
            [self.y * o.x, self.y * o.y, self.y * o.z],
            [self.z * o.x, self.z * o.y, self.z * o.z],
        ])
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl IndexMut<usize> for Vec3 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        match i {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat3 {
    pub m: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };
    pub const ZERO: Mat3 = Mat3 { m: [[0.0; 3]; 3] };

    #[inline]
    pub const fn new(m: [[f64; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn from_row_major(a: [f64; 9]) -> Self {
        Self::new([[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]])
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_diagonal(d: Vec3) -> Self {
        Self::new([[d.x, 0.0, 0.0], [0.0, d.y, 0.0], [0.0, 0.0, d.z]])
    }

    pub fn scaled_identity(s: f64) -> Self {
        Self::from_diagonal(Vec3::new(s, s, s))
    }

    /// Matrix whose columns are `a`, `b`, `c`.
    pub fn from_columns(a: Vec3, b: Vec3, c: Vec3) -> Self {
        Self::new([[a.x, b.x, c.x], [a.y, b.y, c.y], [a.z, b.z, c.z]])
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::from_array(self.m[i])
    }

    #[inline]
    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    #[inline]
    pub fn transpose(&self) -> Mat3 {
        let m = &self.m;
        Mat3::new([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// vᵀ·A·w
    #[inline]
    pub fn bilinear(&self, v: Vec3, w: Vec3) -> f64 {
        v.dot(self.mul_vec(w))
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Option<Mat3> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = &self.m;
        let inv_det = 1.0 / det;
        let c = |a: usize, b: usize, c: usize, d: usize| m[a][b] * m[c][d];
        Some(Mat3::new([
            [
                (c(1, 1, 2, 2) - c(1, 2, 2, 1)) * inv_det,
                (c(0, 2, 2, 1) - c(0, 1, 2, 2)) * inv_det,
                (c(0, 1, 1, 2) - c(0, 2, 1, 1)) * inv_det,
            ],
            [
                (c(1, 2, 2, 0) - c(1, 0, 2, 2)) * inv_det,
                (c(0, 0, 2, 2) - c(0, 2, 2, 0)) * inv_det,
                (c(0, 2, 1, 0) - c(0, 0, 1, 2)) * inv_det,
            ],
            [
                (c(1, 0, 2, 1) - c(1, 1, 2, 0)) * inv_det,
                (c(0, 1, 2, 0) - c(0, 0, 2, 1)) * inv_det,
                (c(0, 0, 1, 1) - c(0, 1, 1, 0)) * inv_det,
            ],
        ]))
    }

    /// (A + Aᵀ) / 2
    pub fn symmetrized(&self) -> Mat3 {
        (*self + self.transpose()) * 0.5
    }

    /// Max |A - Aᵀ| relative to max |A|.
    pub fn asymmetry(&self) -> f64 {
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                diff = diff.max((self.m[i][j] - self.m[j][i]).abs());
                scale = scale.max(self.m[i][j].abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    /// Positive-definiteness of the symmetric part via Sylvester's criterion.
    pub fn is_positive_definite(&self) -> bool {
        let s = self.symmetrized().m;
        let d1 = s[0][0];
        let d2 = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let d3 = self.symmetrized().determinant();
        d1 > 0.0 && d2 > 0.0 && d3 > 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().flatten().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Frobenius inner product tr(Aᵀ B).
    pub fn frobenius_dot(&self, o: &Mat3) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.m[i][j] * o.m[i][j];
            }
        }
        s
    }

    /// Skew-symmetric cross-product matrix [v]×.
    pub fn skew(v: Vec3) -> Mat3 {
        Mat3::new([[0.0, -v.z, v.y], [v.z, 0.0, -v.x], [-v.y, v.x, 0.0]])
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.m[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.m[i][j]
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut r = self;
        r += o;
        r
    }
}

impl AddAssign for Mat3 {
    fn add_assign(&mut self, o: Mat3) {
        for i in 0..3 {
            for j in 0..3 {
                self.m[i][j] += o.m[i][j];
            }
        }
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        let mut r = self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] -= o.m[i][j];
            }
        }
        r
    }
}

impl Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(self, s: f64) -> Mat3 {
        let mut r = self;
        for row in r.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        r
    }
}

impl Mul<Mat3> for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut r = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] =
                    self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        r
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        self.mul_vec(v)
    }
}

/// Rotation matrix exp([ω]×) from an axis-angle vector (Rodrigues).
pub fn rotation_from_axis_angle(omega: Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let k = Mat3::skew(omega);
    let k2 = k * k;
    let (a, b) = if theta2 < 1e-16 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = sqrt(theta2);
        (sin(theta) / theta, (1.0 - cos(theta)) / theta2)
    };
    Mat3::IDENTITY + k * a + k2 * b
}

/// Axis-angle vector of a rotation matrix (inverse of [`rotation_from_axis_angle`]).
pub fn axis_angle_from_rotation(r: &Mat3) -> Vec3 {
    let angle = rotation_angle(r);
    let w = Vec3::new(
        r.m[2][1] - r.m[1][2],
        r.m[0][2] - r.m[2][0],
        r.m[1][0] - r.m[0][1],
    );
    if angle < 1e-8 {
        return w * 0.5;
    }
    if angle < core::f64::consts::PI - 1e-4 {
        return w * (angle / (2.0 * sin(angle)));
    }
    // Near pi: axis from the symmetric part, R + I = 2 a aᵀ.
    let b = (*r + Mat3::IDENTITY) * 0.5;
    let mut best = 0;
    for i in 1..3 {
        if b.m[i][i] > b.m[best][best] {
            best = i;
        }
    }
    let mut axis = b.col(best) / sqrt(b.m[best][best].max(1e-300));
    if let Some(a) = axis.normalized() {
        axis = a;
    }
    // Sign fixed by the (small) antisymmetric part.
    if axis.dot(w) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Rotation angle in [0, pi] via atan2 of the antisymmetric and trace parts.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let w = Vec3::new(
        r.m[2][1] - r.m[1][2],
        r.m[0][2] - r.m[2][0],
        r.m[1][0] - r.m[0][1],
    );
    let s = 0.5 * w.norm();
    let c = 0.5 * (r.trace() - 1.0);
    atan2(s, c)
}

/// Left Jacobian of SO(3): exp(ω + δ) ≈ exp(J(ω)·δ)·exp(ω).
pub fn so3_left_jacobian(omega: Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let k = Mat3::skew(omega);
    let k2 = k * k;
    let (a, b) = if theta2 < 1e-12 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = sqrt(theta2);
        (
            (1.0 - cos(theta)) / theta2,
            (theta - sin(theta)) / (theta2 * theta),
        )
    };
    Mat3::IDENTITY + k * a + k2 * b
}

/// Any unit vector orthogonal to `n` (assumed unit).
pub fn orthogonal_unit(n: Vec3) -> Vec3 {
    let helper = if n.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    n.cross(helper)
        .normalized()
        .unwrap_or(Vec3::new(0.0, 0.0, 1.0))
}
