//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! into the controller or solver code under test.

#![allow(dead_code)]

use ddmpc::plant::LtiSystem;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_inputs(rng: &mut ChaCha8Rng, m: usize, len: usize, amp: f64) -> Vec<DVector<f64>> {
    (0..len)
        .map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-amp..=amp)))
        .collect()
}

/// Extended observability matrix `[C; CA; ...; CA^{len-1}]`.
pub fn observability(sys: &LtiSystem, len: usize) -> DMatrix<f64> {
    let (n, p) = (sys.a.nrows(), sys.c.nrows());
    let mut o = DMatrix::zeros(p * len, n);
    let mut ca = sys.c.clone();
    for k in 0..len {
        o.view_mut((k * p, 0), (p, n)).copy_from(&ca);
        ca = &ca * &sys.a;
    }
    o
}

/// Block lower-triangular Toeplitz map from stacked inputs to stacked outputs.
pub fn toeplitz(sys: &LtiSystem, len: usize) -> DMatrix<f64> {
    let (m, p) = (sys.b.ncols(), sys.c.nrows());
    let mut markov = vec![sys.d.clone()];
    let mut ak_b = sys.b.clone();
    for _ in 1..len {
        markov.push(&sys.c * &ak_b);
        ak_b = &sys.a * &ak_b;
    }
    let mut t = DMatrix::zeros(p * len, m * len);
    for i in 0..len {
        for j in 0..=i {
            t.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i - j]);
        }
    }
    t
}

pub fn stack(v: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(v.iter().map(|x| x.len()).sum(), v.iter().flat_map(|x| x.iter().copied()))
}

/// Least-squares residual of explaining `y` as `O x0 + T u` for some `x0`,
/// relative to `max(1, |y|)`.
pub fn realization_residual(sys: &LtiSystem, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let len = u.len() / sys.b.ncols();
    let o = observability(sys, len);
    let rhs = y - toeplitz(sys, len) * u;
    // Observable systems give a full-column-rank O.
    let qr = o.clone().qr();
    let x0 = qr.r().solve_upper_triangular(&(qr.q().transpose() * &rhs)).expect("observable");
    (&o * x0 - &rhs).norm() / y.norm().max(1.0)
}

/// Orthonormal basis of the null space of `e` and a minimum-norm solution of
/// `e x = rhs`; returns `None` if the system is inconsistent.
///
/// Column-pivoted QR of `e'` (padded to square): the first `r` columns of Q
/// span the row space of `e`, the rest its null space.
fn affine_parametrization(e: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n = e.ncols();
    let mut padded = DMatrix::zeros(n, n.max(e.nrows()));
    padded.view_mut((0, 0), (n, e.nrows())).copy_from(&e.transpose());
    let qr = padded.col_piv_qr();
    let (q, r) = (qr.q(), qr.r());
    let diag: Vec<f64> = (0..n).map(|i| r[(i, i)].abs()).collect();
    let tol = 1e-10 * diag.iter().copied().fold(1.0, f64::max);
    let rank = diag.iter().take_while(|&&d| d > tol).count();
    let basis = q.columns(0, rank).into_owned();
    let reduced = (e * &basis).qr();
    let y = reduced.r().solve_upper_triangular(&(reduced.q().transpose() * rhs))?;
    let x0 = &basis * y;
    if (e * &x0 - rhs).norm() > 1e-8 * (1.0 + rhs.norm()) {
        return None;
    }
    Some((x0, q.columns(rank, n - rank).into_owned()))
}

/// Model-based MPC with terminal equality constraints on the last `n` inputs
/// and outputs, no input or output bounds. Returns the optimal input sequence
/// `u_0..u_{L-1}` from state `x0`.
pub struct ModelMpc<'a> {
    pub sys: &'a LtiSystem,
    pub horizon: usize,
    pub order: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub u_s: DVector<f64>,
    pub y_s: DVector<f64>,
}

impl ModelMpc<'_> {
    pub fn solve(&self, x0: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        let (m, p, l, n) = (self.sys.b.ncols(), self.sys.c.nrows(), self.horizon, self.order);
        let o = observability(self.sys, l);
        let t = toeplitz(self.sys, l);
        let free = &o * x0;
        // Terminal rows: u_k = u_s and (free + T u)_k = y_s for k in [L-n, L-1].
        let mut e = DMatrix::zeros((m + p) * n, m * l);
        let mut rhs = DVector::zeros((m + p) * n);
        for (i, k) in ((l - n)..l).enumerate() {
            for c in 0..m {
                e[(i * m + c, k * m + c)] = 1.0;
                rhs[i * m + c] = self.u_s[c];
            }
            let row0 = m * n + i * p;
            e.view_mut((row0, 0), (p, m * l)).copy_from(&t.rows(k * p, p));
            for c in 0..p {
                rhs[row0 + c] = self.y_s[c] - free[k * p + c];
            }
        }
        let (u_part, z) = affine_parametrization(&e, &rhs)?;

        let rbar = DMatrix::from_fn(m * l, m * l, |i, j| if i / m == j / m { self.r[(i % m, j % m)] } else { 0.0 });
        let qbar = DMatrix::from_fn(p * l, p * l, |i, j| if i / p == j / p { self.q[(i % p, j % p)] } else { 0.0 });
        let us_stack = DVector::from_fn(m * l, |i, _| self.u_s[i % m]);
        let ys_stack = DVector::from_fn(p * l, |i, _| self.y_s[i % p]);
        // J(u) = (u - us)' Rbar (u - us) + (free + T u - ys)' Qbar (...)
        let hess = &rbar + t.transpose() * &qbar * &t;
        let grad_at = |u: &DVector<f64>| {
            &rbar * (u - &us_stack) + t.transpose() * &qbar * (&free + &t * u - &ys_stack)
        };
        if z.ncols() == 0 {
            return Some(split(&u_part, m));
        }
        let hz = z.transpose() * &hess * &z;
        let g = z.transpose() * grad_at(&u_part);
        let w = hz.cholesky()?.solve(&(-g));
        Some(split(&(u_part + z * w), m))
    }
}

fn split(v: &DVector<f64>, m: usize) -> Vec<DVector<f64>> {
    (0..v.len() / m).map(|k| v.rows(k * m, m).into_owned()).collect()
}

/// Independent QP oracle: method of multipliers on the equality constraints
/// with an accelerated projected-gradient inner loop on the box.
pub fn projected_gradient_qp(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> DVector<f64> {
    let n = f.len();
    let rho = 100.0;
    let hr = h + a.transpose() * a * rho;
    let lip = hr.clone().symmetric_eigen().eigenvalues.max();
    let step = 1.0 / lip;
    let project = |z: &DVector<f64>| DVector::from_fn(n, |i, _| z[i].clamp(lower[i], upper[i]));
    let mut lambda = DVector::zeros(b.len());
    let mut z = project(&DVector::zeros(n));
    for _ in 0..5_000 {
        let lin = f + a.transpose() * (&lambda - b * rho);
        let mut y = z.clone();
        let mut t = 1.0f64;
        for _ in 0..100_000 {
            let grad = &hr * &y + &lin;
            let z_next = project(&(&y - grad * step));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            // Restart momentum when it points uphill.
            let restart = (&z_next - &z).dot(&(&y - &z_next)) > 0.0;
            let beta = if restart { 0.0 } else { (t - 1.0) / t_next };
            y = &z_next + (&z_next - &z) * beta;
            z = z_next;
            t = if restart { 1.0 } else { t_next };
            // Fixed-point residual of the projected-gradient map at z.
            let pg = (&z - project(&(&z - (&hr * &z + &lin) * step))).amax();
            if pg < 1e-15 {
                break;
            }
        }
        let viol = a * &z - b;
        lambda += &viol * rho;
        if viol.amax() < 1e-13 {
            break;
        }
    }
    z
}
