//! Closed-form SE(3) screw geometry.
//!
//! A deformation is encoded by a screw axis `(a, b)`: the direction of `a`
//! is the rotation axis, its magnitude the rotation angle, and `b` generates
//! the translation. The exponential map realizes the screw as a rigid
//! transform `(R, p)` which warps points into the canonical frame as
//! `x' = R x + p`.
//!
//! Everything here is expressed through the coefficient functions
//!
//! ```text
//! f1(u) = sin(z)/z          f2(u) = (1 - cos(z))/z^2     f3(u) = (z - sin(z))/z^3
//! ```
//!
//! with `u = z^2 = |a|^2`, so the maps are smooth in `a` through zero and
//! the series fallbacks avoid cancellation. The functions are generic over
//! [`WarpScalar`], which lets dual numbers flow through the exact same code
//! to produce first and second derivatives of the warp with respect to the
//! screw parameters.

use crate::error::{Error, Result};
use crate::num::{Dual, Real, WarpScalar};

/// Norm threshold below which `a` or `b` is treated as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-6;

/// Switch point (on `u = |a|^2`) between series and closed-form coefficients.
const SERIES_U_THRESHOLD: f64 = 0.25;

/// Screw-axis element of se(3): rotation generator `a`, translation generator `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScrewAxis<S> {
    pub a: [S; 3],
    pub b: [S; 3],
}

impl<S: Real> ScrewAxis<S> {
    pub fn new(a: [S; 3], b: [S; 3]) -> Self {
        ScrewAxis { a, b }
    }

    pub fn zero() -> Self {
        let z = S::zero();
        ScrewAxis {
            a: [z; 3],
            b: [z; 3],
        }
    }

    /// Rotation angle `z = |a|`.
    pub fn angle(&self) -> S {
        norm3(&self.a)
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

/// Rigid transform `(R, p)` with `R` in SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<S> {
    pub rotation: [[S; 3]; 3],
    pub translation: [S; 3],
}

impl<S: Real> RigidTransform<S> {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: identity3(),
            translation: [S::zero(); 3],
        }
    }

    /// Applies the transform: `R x + p`.
    pub fn apply(&self, x: &[S; 3]) -> [S; 3] {
        let rx = mat_vec3(&self.rotation, x);
        [
            rx[0] + self.translation[0],
            rx[1] + self.translation[1],
            rx[2] + self.translation[2],
        ]
    }

    /// Max deviation of `R^T R` from the identity plus `|det R - 1|`.
    pub fn orthogonality_defect(&self) -> S {
        let rt = transpose3(&self.rotation);
        let rtr = mat_mul3(&rt, &self.rotation);
        let mut defect = S::zero();
        for (i, row) in rtr.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let target = if i == j { S::one() } else { S::zero() };
                defect = defect.max((v - target).abs());
            }
        }
        defect.max((det3(&self.rotation) - S::one()).abs())
    }
}

/// Warp configuration. The default realizes the normalized-translation
/// formula (`p` built from the unit vector `b/|b|`, scaled by the rotation
/// angle); `unnormalized_translation` decouples translation magnitude from
/// the angle by using `b` directly.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WarpOptions {
    #[serde(default)]
    pub unnormalized_translation: bool,
}

// ---------------------------------------------------------------------------
// Small fixed-size helpers
// ---------------------------------------------------------------------------

pub(crate) fn identity3<T: WarpScalar>() -> [[T; 3]; 3] {
    let o = T::wone();
    let z = T::wzero();
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub(crate) fn cross3<T: WarpScalar>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn mat_vec3<T: WarpScalar>(m: &[[T; 3]; 3], v: &[T; 3]) -> [T; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul3<T: WarpScalar>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::wzero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub(crate) fn transpose3<T: WarpScalar>(m: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::wzero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub(crate) fn det3<T: WarpScalar>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn norm3<S: Real>(v: &[S; 3]) -> S {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3<T: WarpScalar>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

// ---------------------------------------------------------------------------
// Coefficient functions of u = |a|^2
// ---------------------------------------------------------------------------

/// Evaluates (f1, f2, f3). Series for small `u`, cancellation-free closed
/// forms otherwise; both branches agree well past single precision at the
/// switch point so dual-number derivatives stay consistent.
fn screw_coeffs<T: WarpScalar>(u: T) -> (T, T, T) {
    if u.value() < SERIES_U_THRESHOLD {
        // f1 = sum (-u)^k/(2k+1)!, f2 = sum (-u)^k/(2k+2)!, f3 = sum (-u)^k/(2k+3)!
        let f1 = horner(
            u,
            &[
                1.0,
                -1.0 / 6.0,
                1.0 / 120.0,
                -1.0 / 5040.0,
                1.0 / 362_880.0,
            ],
        );
        let f2 = horner(
            u,
            &[
                0.5,
                -1.0 / 24.0,
                1.0 / 720.0,
                -1.0 / 40_320.0,
                1.0 / 3_628_800.0,
            ],
        );
        let f3 = horner(
            u,
            &[
                1.0 / 6.0,
                -1.0 / 120.0,
                1.0 / 5040.0,
                -1.0 / 362_880.0,
                1.0 / 39_916_800.0,
            ],
        );
        (f1, f2, f3)
    } else {
        let z = u.sqrt_guarded();
        let f1 = z.wsin() / z;
        let half = T::wlit(0.5);
        let sh = (z * half).wsin();
        let f2 = (sh * sh + sh * sh) / u;
        let f3 = (z - z.wsin()) / (u * z);
        (f1, f2, f3)
    }
}

fn horner<T: WarpScalar>(u: T, coeffs: &[f64]) -> T {
    let mut acc = T::wlit(*coeffs.last().unwrap());
    for &c in coeffs.iter().rev().skip(1) {
        acc = acc * u + T::wlit(c);
    }
    acc
}

// ---------------------------------------------------------------------------
// Generic warp kernels
// ---------------------------------------------------------------------------

/// Rotation matrix `R = I + f1 [a]x + f2 [a]x^2` (Rodrigues in the unnormalized form).
pub(crate) fn rotation_from_axis_generic<T: WarpScalar>(a: &[T; 3]) -> [[T; 3]; 3] {
    let u = dot3(a, a);
    let (f1, f2, _) = screw_coeffs(u);
    let mut r = identity3();
    // [a]x and [a]x^2 expanded elementwise: [a]x^2 = a a^T - u I
    let k = [
        [T::wzero(), -a[2], a[1]],
        [a[2], T::wzero(), -a[0]],
        [-a[1], a[0], T::wzero()],
    ];
    for i in 0..3 {
        for j in 0..3 {
            let aat = a[i] * a[j];
            let k2 = aat - if i == j { u } else { T::wzero() };
            r[i][j] = r[i][j] + f1 * k[i][j] + f2 * k2;
        }
    }
    r
}

/// Translation component of the screw transform.
fn translation_generic<T: WarpScalar>(a: &[T; 3], b: &[T; 3], unnormalized: bool) -> [T; 3] {
    let u = dot3(a, a);
    let (_, f2, f3) = screw_coeffs(u);
    let b_eff = if unnormalized {
        *b
    } else {
        let nb2 = dot3(b, b);
        if nb2.value() > DEGENERACY_EPS * DEGENERACY_EPS {
            let inv = T::wone() / nb2.sqrt_guarded();
            [b[0] * inv, b[1] * inv, b[2] * inv]
        } else {
            [T::wzero(); 3]
        }
    };
    let axb = cross3(a, &b_eff);
    let axaxb = cross3(a, &axb);
    let mut p = [T::wzero(); 3];
    for i in 0..3 {
        p[i] = b_eff[i] + f2 * axb[i] + f3 * axaxb[i];
    }
    if unnormalized {
        p
    } else {
        // Angle-scaled form: p = z (b_hat + f2 a x b_hat + f3 a x (a x b_hat))
        let z = u.sqrt_guarded();
        [p[0] * z, p[1] * z, p[2] * z]
    }
}

/// Full warp `x' = R(a) x + p(a, b)` without forming `R`.
pub(crate) fn warp_point_generic<T: WarpScalar>(
    a: &[T; 3],
    b: &[T; 3],
    x: &[T; 3],
    unnormalized: bool,
) -> [T; 3] {
    let u = dot3(a, a);
    let (f1, f2, _) = screw_coeffs(u);
    let axx = cross3(a, x);
    let axaxx = cross3(a, &axx);
    let p = translation_generic(a, b, unnormalized);
    [
        x[0] + f1 * axx[0] + f2 * axaxx[0] + p[0],
        x[1] + f1 * axx[1] + f2 * axaxx[1] + p[1],
        x[2] + f1 * axx[2] + f2 * axaxx[2] + p[2],
    ]
}

/// Derivatives of the coefficient functions with respect to `u`.
///
/// Closed forms rewrite as `f1' = (cos z - f1)/(2u)`, `f2' = (f1 - 2 f2)/(2u)`,
/// `f3' = (f2 - 3 f3)/(2u)`; series below the switch point avoid the
/// cancellation those forms have near zero.
fn screw_coeff_derivs<T: WarpScalar>(u: T, f1: T, f2: T, f3: T) -> (T, T, T) {
    if u.value() < SERIES_U_THRESHOLD {
        let d1 = horner(
            u,
            &[-1.0 / 6.0, 1.0 / 60.0, -1.0 / 1680.0, 1.0 / 90_720.0],
        );
        let d2 = horner(
            u,
            &[-1.0 / 24.0, 1.0 / 360.0, -1.0 / 13_440.0, 1.0 / 907_200.0],
        );
        let d3 = horner(
            u,
            &[-1.0 / 120.0, 1.0 / 2520.0, -1.0 / 120_960.0, 1.0 / 9_979_200.0],
        );
        (d1, d2, d3)
    } else {
        let z = u.sqrt_guarded();
        let half = T::wlit(0.5);
        let inv2u = half / u;
        let d1 = (z.wcos() - f1) * inv2u;
        let d2 = (f1 - (f2 + f2)) * inv2u;
        let d3 = (f2 - (f3 + f3 + f3)) * inv2u;
        (d1, d2, d3)
    }
}

/// Warp plus its Jacobian with respect to the six screw components,
/// `D[i][m] = d x'_i / d s_m` with `s = (a, b)`, in closed form.
///
/// Generic over [`WarpScalar`], so dual numbers through this function give
/// the second derivatives the elastic regularizer needs. The all-dual
/// route over [`warp_point_generic`] ([`warp_screw_grad_dual`]) checks this
/// derivation in tests.
pub fn warp_screw_grad<T: WarpScalar>(
    a: &[T; 3],
    b: &[T; 3],
    x: &[T; 3],
    unnormalized: bool,
) -> ([T; 3], [[T; 6]; 3]) {
    let zero = T::wzero();
    let u = dot3(a, a);
    let (f1, f2, f3) = screw_coeffs(u);
    let (df1, df2, df3) = screw_coeff_derivs(u, f1, f2, f3);

    // effective translation generator and its derivative with respect to b
    let (b_eff, db_scale, bhat): ([T; 3], T, Option<[T; 3]>) = if unnormalized {
        (*b, T::wone(), None)
    } else {
        let nb2 = dot3(b, b);
        if nb2.value() > DEGENERACY_EPS * DEGENERACY_EPS {
            let nb = nb2.sqrt_guarded();
            let inv = T::wone() / nb;
            let bh = [b[0] * inv, b[1] * inv, b[2] * inv];
            (bh, inv, Some(bh))
        } else {
            ([zero; 3], zero, None)
        }
    };

    let cx = cross3(a, x); // a x x
    let adx = dot3(a, x);
    let dx = [a[0] * adx - u * x[0], a[1] * adx - u * x[1], a[2] * adx - u * x[2]];
    let cb = cross3(a, &b_eff);
    let adb = dot3(a, &b_eff);
    let db = [
        a[0] * adb - u * b_eff[0],
        a[1] * adb - u * b_eff[1],
        a[2] * adb - u * b_eff[2],
    ];

    // q = b_eff + f2 (a x b_eff) + f3 (a (a.b_eff) - u b_eff)
    let q = [
        b_eff[0] + f2 * cb[0] + f3 * db[0],
        b_eff[1] + f2 * cb[1] + f3 * db[1],
        b_eff[2] + f2 * cb[2] + f3 * db[2],
    ];

    let z = u.sqrt_guarded();
    let mut value = [zero; 3];
    for i in 0..3 {
        let p = if unnormalized { q[i] } else { z * q[i] };
        value[i] = x[i] + f1 * cx[i] + f2 * dx[i] + p;
    }

    let mut d = [[zero; 6]; 3];
    // ---- columns 0..3: derivative with respect to a_j ----
    let e = identity3::<T>();
    // dz/da_j = a_j / z, guarded at the cone
    let zpos = z.value() > 0.0;
    for j in 0..3 {
        let two_aj = a[j] + a[j];
        let ejx = cross3(&e[j], x);
        let ejb = cross3(&e[j], &b_eff);
        for i in 0..3 {
            // rotation action on x
            let mut v = df1 * two_aj * cx[i] + f1 * ejx[i];
            v = v + df2 * two_aj * dx[i]
                + f2 * (e[j][i] * adx + a[i] * x[j] - two_aj * x[i]);
            // translation part
            let dq_i = df2 * two_aj * cb[i]
                + f2 * ejb[i]
                + df3 * two_aj * db[i]
                + f3 * (e[j][i] * adb + a[i] * b_eff[j] - two_aj * b_eff[i]);
            if unnormalized {
                v = v + dq_i;
            } else {
                let dz = if zpos { a[j] / z } else { zero };
                v = v + dz * q[i] + z * dq_i;
            }
            d[i][j] = v;
        }
    }
    // ---- columns 3..6: derivative with respect to b_m ----
    for m in 0..3 {
        // column of d(b_eff)/d(b_m)
        let col: [T; 3] = match &bhat {
            None if unnormalized => [e[m][0], e[m][1], e[m][2]],
            None => [zero; 3], // degenerate |b|: b_eff frozen at zero
            Some(bh) => {
                // (I - bh bh^T)/|b| applied to e_m
                [
                    (e[m][0] - bh[0] * bh[m]) * db_scale,
                    (e[m][1] - bh[1] * bh[m]) * db_scale,
                    (e[m][2] - bh[2] * bh[m]) * db_scale,
                ]
            }
        };
        let ccol = cross3(a, &col);
        let adc = dot3(a, &col);
        for i in 0..3 {
            let dq_i = col[i] + f2 * ccol[i] + f3 * (a[i] * adc - u * col[i]);
            d[i][m + 3] = if unnormalized { dq_i } else { z * dq_i };
        }
    }
    (value, d)
}

/// Reference implementation of [`warp_screw_grad`] via forward-mode duals
/// over the plain warp; used to validate the closed-form derivation.
pub fn warp_screw_grad_dual<T: WarpScalar>(
    a: &[T; 3],
    b: &[T; 3],
    x: &[T; 3],
    unnormalized: bool,
) -> ([T; 3], [[T; 6]; 3]) {
    let xd: [Dual<T>; 3] = [
        Dual::constant(x[0]),
        Dual::constant(x[1]),
        Dual::constant(x[2]),
    ];
    let mut d = [[T::wzero(); 6]; 3];
    let mut value = [T::wzero(); 3];
    for m in 0..6 {
        let mut ad = [
            Dual::constant(a[0]),
            Dual::constant(a[1]),
            Dual::constant(a[2]),
        ];
        let mut bd = [
            Dual::constant(b[0]),
            Dual::constant(b[1]),
            Dual::constant(b[2]),
        ];
        if m < 3 {
            ad[m].d = T::wone();
        } else {
            bd[m - 3].d = T::wone();
        }
        let out = warp_point_generic(&ad, &bd, &xd, unnormalized);
        for i in 0..3 {
            d[i][m] = out[i].d;
            if m == 0 {
                value[i] = out[i].v;
            }
        }
    }
    (value, d)
}

/// Contraction of the warp's second derivative with an adjoint matrix:
/// returns `g[n] = sum_{i,m} adj[i][m] * d^2 x'_i / (d s_m d s_n)`.
///
/// Used when back-propagating through the spatial Jacobian of the warp.
pub fn warp_second_order_contraction<T: WarpScalar>(
    a: &[T; 3],
    b: &[T; 3],
    x: &[T; 3],
    unnormalized: bool,
    adj: &[[T; 6]; 3],
) -> [T; 6] {
    let mut g = [T::wzero(); 6];
    for n in 0..6 {
        let mut ad = [
            Dual::constant(a[0]),
            Dual::constant(a[1]),
            Dual::constant(a[2]),
        ];
        let mut bd = [
            Dual::constant(b[0]),
            Dual::constant(b[1]),
            Dual::constant(b[2]),
        ];
        if n < 3 {
            ad[n].d = T::wone();
        } else {
            bd[n - 3].d = T::wone();
        }
        let xd = [
            Dual::constant(x[0]),
            Dual::constant(x[1]),
            Dual::constant(x[2]),
        ];
        let (_, d_dual) = warp_screw_grad(&ad, &bd, &xd, unnormalized);
        let mut acc = T::wzero();
        for i in 0..3 {
            for m in 0..6 {
                acc = acc + adj[i][m] * d_dual[i][m].d;
            }
        }
        g[n] = acc;
    }
    g
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

fn ensure_finite<S: Real>(vs: &[S], what: &str) -> Result<()> {
    if vs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("non-finite {what}")))
    }
}

/// Exponential map so(3) -> SO(3): Rodrigues' rotation from an axis-angle vector.
pub fn exp_so3<S: Real>(a: [S; 3]) -> Result<[[S; 3]; 3]> {
    ensure_finite(&a, "rotation axis")?;
    Ok(rotation_from_axis_generic(&a))
}

/// Realizes a screw axis as a rigid transform.
pub fn screw_to_transform<S: Real>(s: &ScrewAxis<S>, opts: WarpOptions) -> Result<RigidTransform<S>> {
    ensure_finite(&s.a, "screw rotation component")?;
    ensure_finite(&s.b, "screw translation component")?;
    Ok(RigidTransform {
        rotation: rotation_from_axis_generic(&s.a),
        translation: translation_generic(&s.a, &s.b, opts.unnormalized_translation),
    })
}

/// Warps a point into the canonical frame: `x' = R x + p`.
pub fn warp_point<S: Real>(x: [S; 3], s: &ScrewAxis<S>, opts: WarpOptions) -> Result<[S; 3]> {
    ensure_finite(&x, "point")?;
    ensure_finite(&s.a, "screw rotation component")?;
    ensure_finite(&s.b, "screw translation component")?;
    Ok(warp_point_generic(
        &s.a,
        &s.b,
        &x,
        opts.unnormalized_translation,
    ))
}

/// A spatially varying screw field: the source of per-point deformations.
///
/// Implementors provide the screw at a query point and, for Jacobian
/// consumers, its spatial derivative `M[m][j] = d s_m / d x_j`.
pub trait ScrewField<S: Real> {
    fn screw(&self, x: [S; 3], t: S) -> ScrewAxis<S>;

    /// Screw plus its exact spatial Jacobian at `(x, t)`.
    fn screw_with_spatial_jacobian(&self, x: [S; 3], t: S) -> (ScrewAxis<S>, [[S; 3]; 6]);
}

/// A field emitting the zero screw everywhere: the identity warp.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroScrewField;

impl<S: Real> ScrewField<S> for ZeroScrewField {
    fn screw(&self, _x: [S; 3], _t: S) -> ScrewAxis<S> {
        ScrewAxis::zero()
    }

    fn screw_with_spatial_jacobian(&self, _x: [S; 3], _t: S) -> (ScrewAxis<S>, [[S; 3]; 6]) {
        (ScrewAxis::zero(), [[S::zero(); 3]; 6])
    }
}

/// Assembles the spatial warp Jacobian from its parts:
/// `J = R + D M` where `D` is the screw-gradient of the warp and `M` the
/// spatial Jacobian of the screw field.
pub fn spatial_jacobian_from_parts<S: Real>(
    rotation: &[[S; 3]; 3],
    screw_grad: &[[S; 6]; 3],
    field_jac: &[[S; 3]; 6],
) -> [[S; 3]; 3] {
    let mut j = *rotation;
    for i in 0..3 {
        for col in 0..3 {
            let mut acc = S::zero();
            for m in 0..6 {
                acc += screw_grad[i][m] * field_jac[m][col];
            }
            j[i][col] += acc;
        }
    }
    j
}

/// Exact Jacobian `d x'/d x` of the full warp at `(x, t)`, including the
/// dependence of the screw on the query point.
pub fn warp_jacobian<S: Real, F: ScrewField<S>>(
    field: &F,
    x: [S; 3],
    t: S,
    opts: WarpOptions,
) -> Result<[[S; 3]; 3]> {
    ensure_finite(&x, "point")?;
    let (screw, field_jac) = field.screw_with_spatial_jacobian(x, t);
    let (_, screw_grad) = warp_screw_grad(&screw.a, &screw.b, &x, opts.unnormalized_translation);
    let rotation = rotation_from_axis_generic(&screw.a);
    Ok(spatial_jacobian_from_parts(
        &rotation,
        &screw_grad,
        &field_jac,
    ))
}
