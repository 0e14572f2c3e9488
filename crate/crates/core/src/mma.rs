//! Method of Moving Asymptotes for
//!
//! ```text
//! minimize   f0(x) + a0 z + Σ (c_i y_i + ½ d_i y_i²)
//! subject to f_i(x) − a_i z − y_i ≤ 0,   xmin ≤ x ≤ xmax,   y, z ≥ 0
//! ```
//!
//! Each step builds the separable convex approximation around the current
//! iterate and solves it with a primal-dual interior-point method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmaOptions {
    /// Move limit as a fraction of each variable's range.
    pub move_limit: f64,
    pub asyinit: f64,
    pub asyincr: f64,
    pub asydecr: f64,
    pub albefa: f64,
    pub raa0: f64,
    pub epsimin: f64,
    pub a0: f64,
    /// Penalty on the constraint slack variables `y`.
    pub c: f64,
    pub d: f64,
}

impl Default for MmaOptions {
    fn default() -> Self {
        Self {
            move_limit: 0.1,
            asyinit: 0.5,
            asyincr: 1.2,
            asydecr: 0.7,
            albefa: 0.1,
            raa0: 1e-5,
            epsimin: 1e-7,
            a0: 1.0,
            c: 1000.0,
            d: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmaState {
    pub x: Vec<f64>,
    pub xold1: Vec<f64>,
    pub xold2: Vec<f64>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    /// Number of completed steps since the asymptotes were last reset.
    pub iter: usize,
    pub move_limit: f64,
}

impl MmaState {
    pub fn new(x0: Vec<f64>, opts: &MmaOptions) -> Self {
        Self {
            xold1: x0.clone(),
            xold2: x0.clone(),
            low: x0.clone(),
            upp: x0.clone(),
            x: x0,
            iter: 0,
            move_limit: opts.move_limit,
        }
    }

    /// Restarts the asymptote history from the current iterate.
    pub fn reset_asymptotes(&mut self) {
        self.xold1 = self.x.clone();
        self.xold2 = self.x.clone();
        self.iter = 0;
    }

    /// Moves to `x`, discarding the oscillation history.
    pub fn restart_at(&mut self, x: Vec<f64>) {
        self.x = x;
        self.reset_asymptotes();
    }

    /// One MMA iteration. `dfdx` has one row per constraint. On subproblem
    /// failure the move limit is halved and the step retried up to three times.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        df0dx: &[f64],
        fval: &[f64],
        dfdx: &DMatrix<f64>,
        xmin: &[f64],
        xmax: &[f64],
        opts: &MmaOptions,
    ) -> Result<Vec<f64>> {
        let n = self.x.len();
        let m = fval.len();
        if df0dx.len() != n || dfdx.nrows() != m || dfdx.ncols() != n || xmin.len() != n || xmax.len() != n {
            return Err(Error::Invalid("MMA dimension mismatch".into()));
        }
        if df0dx.iter().chain(fval).chain(dfdx.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite MMA input".into()));
        }

        self.update_asymptotes(xmin, xmax, opts);

        let mut move_limit = self.move_limit;
        let mut last_err = None;
        for _ in 0..4 {
            let sub = Subproblem::build(self, df0dx, fval, dfdx, xmin, xmax, move_limit, opts);
            match sub.solve(opts) {
                Ok(xnew) => {
                    self.xold2 = std::mem::replace(&mut self.xold1, self.x.clone());
                    self.x = xnew.clone();
                    self.iter += 1;
                    return Ok(xnew);
                }
                Err(e) => {
                    last_err = Some(e);
                    move_limit *= 0.5;
                }
            }
        }
        Err(last_err.unwrap())
    }

    fn update_asymptotes(&mut self, xmin: &[f64], xmax: &[f64], opts: &MmaOptions) {
        let n = self.x.len();
        for i in 0..n {
            let range = xmax[i] - xmin[i];
            let x = self.x[i];
            if self.iter < 2 {
                self.low[i] = x - opts.asyinit * range;
                self.upp[i] = x + opts.asyinit * range;
            } else {
                let zzz = (x - self.xold1[i]) * (self.xold1[i] - self.xold2[i]);
                let factor = if zzz > 0.0 {
                    opts.asyincr
                } else if zzz < 0.0 {
                    opts.asydecr
                } else {
                    1.0
                };
                let low = x - factor * (self.xold1[i] - self.low[i]);
                let upp = x + factor * (self.upp[i] - self.xold1[i]);
                self.low[i] = low.clamp(x - 10.0 * range, x - 0.01 * range);
                self.upp[i] = upp.clamp(x + 0.01 * range, x + 10.0 * range);
            }
        }
    }
}

/// Separable convex approximation at one iterate.
struct Subproblem {
    low: DVector<f64>,
    upp: DVector<f64>,
    alfa: DVector<f64>,
    beta: DVector<f64>,
    p0: DVector<f64>,
    q0: DVector<f64>,
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    b: DVector<f64>,
    a: DVector<f64>,
    c: DVector<f64>,
    d: DVector<f64>,
}

impl Subproblem {
    #[allow(clippy::too_many_arguments)]
    fn build(
        st: &MmaState,
        df0dx: &[f64],
        fval: &[f64],
        dfdx: &DMatrix<f64>,
        xmin: &[f64],
        xmax: &[f64],
        move_limit: f64,
        opts: &MmaOptions,
    ) -> Self {
        let n = st.x.len();
        let m = fval.len();
        let mut alfa = DVector::zeros(n);
        let mut beta = DVector::zeros(n);
        let mut p0 = DVector::zeros(n);
        let mut q0 = DVector::zeros(n);
        let mut p = DMatrix::zeros(m, n);
        let mut q = DMatrix::zeros(m, n);

        for j in 0..n {
            let x = st.x[j];
            let range = xmax[j] - xmin[j];
            let (low, upp) = (st.low[j], st.upp[j]);
            alfa[j] = (low + opts.albefa * (x - low)).max(x - move_limit * range).max(xmin[j]);
            beta[j] = (upp - opts.albefa * (upp - x)).min(x + move_limit * range).min(xmax[j]);

            let xmami = range.max(1e-5);
            let ux2 = (upp - x) * (upp - x);
            let xl2 = (x - low) * (x - low);
            let (gp, gm) = (df0dx[j].max(0.0), (-df0dx[j]).max(0.0));
            let pq = 0.001 * (gp + gm) + opts.raa0 / xmami;
            p0[j] = (gp + pq) * ux2;
            q0[j] = (gm + pq) * xl2;
            for i in 0..m {
                let g = dfdx[(i, j)];
                let (gp, gm) = (g.max(0.0), (-g).max(0.0));
                let pq = 0.001 * (gp + gm) + opts.raa0 / xmami;
                p[(i, j)] = (gp + pq) * ux2;
                q[(i, j)] = (gm + pq) * xl2;
            }
        }

        let low = DVector::from_column_slice(&st.low);
        let upp = DVector::from_column_slice(&st.upp);
        let xv = DVector::from_column_slice(&st.x);
        let uxinv = (&upp - &xv).map(|v| 1.0 / v);
        let xlinv = (&xv - &low).map(|v| 1.0 / v);
        let b = &p * &uxinv + &q * &xlinv - DVector::from_column_slice(fval);

        Self {
            low,
            upp,
            alfa,
            beta,
            p0,
            q0,
            p,
            q,
            b,
            a: DVector::zeros(m),
            c: DVector::from_element(m, opts.c),
            d: DVector::from_element(m, opts.d),
        }
    }

    fn solve(&self, opts: &MmaOptions) -> Result<Vec<f64>> {
        let sol = self.interior_point(opts)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Subproblem("non-finite subproblem solution".into()));
        }
        Ok(sol.iter().copied().collect())
    }

    fn interior_point(&self, opts: &MmaOptions) -> Result<DVector<f64>> {
        let n = self.alfa.len();
        let m = self.b.len();
        let a0 = opts.a0;
        let c = &self.c;

        let mut it = Iterate {
            x: (&self.alfa + &self.beta) * 0.5,
            y: DVector::from_element(m, 1.0),
            z: 1.0,
            lam: DVector::from_element(m, 1.0),
            xsi: DVector::zeros(n),
            eta: DVector::zeros(n),
            mu: c.map(|v| (0.5 * v).max(1.0)),
            zet: 1.0,
            s: DVector::from_element(m, 1.0),
        };
        it.xsi = (&it.x - &self.alfa).map(|v| (1.0 / v).max(1.0));
        it.eta = (&self.beta - &it.x).map(|v| (1.0 / v).max(1.0));

        let mut epsi = 1.0;
        let mut final_residual = f64::INFINITY;
        while epsi > opts.epsimin {
            let mut res = self.residual(&it, epsi, a0);
            let mut resnorm = res.norm();
            let mut resmax = res.amax();
            let mut ittt = 0;
            while resmax > 0.9 * epsi && ittt < 200 {
                ittt += 1;
                let dir = self.newton_direction(&it, epsi, a0)?;

                let mut stm = 1.0_f64;
                let ratio = |v: &DVector<f64>, dv: &DVector<f64>| {
                    v.iter().zip(dv.iter()).map(|(x, dx)| -1.01 * dx / x).fold(f64::NEG_INFINITY, f64::max)
                };
                stm = stm
                    .max(ratio(&it.y, &dir.y))
                    .max(-1.01 * dir.z / it.z)
                    .max(ratio(&it.lam, &dir.lam))
                    .max(ratio(&it.xsi, &dir.xsi))
                    .max(ratio(&it.eta, &dir.eta))
                    .max(ratio(&it.mu, &dir.mu))
                    .max(-1.01 * dir.zet / it.zet)
                    .max(ratio(&it.s, &dir.s));
                for j in 0..n {
                    stm = stm.max(-1.01 * dir.x[j] / (it.x[j] - self.alfa[j]));
                    stm = stm.max(1.01 * dir.x[j] / (self.beta[j] - it.x[j]));
                }
                let mut steg = 1.0 / stm;

                let old = it.clone();
                let mut resinew = 2.0 * resnorm;
                let mut itto = 0;
                while resinew > resnorm && itto < 50 {
                    itto += 1;
                    it = old.advanced(&dir, steg);
                    res = self.residual(&it, epsi, a0);
                    resinew = res.norm();
                    steg *= 0.5;
                }
                if !resinew.is_finite() {
                    return Err(Error::Subproblem("non-finite residual".into()));
                }
                resnorm = resinew;
                resmax = res.amax();
            }
            final_residual = resmax / epsi.max(1.0);
            epsi *= 0.1;
        }
        if final_residual.is_nan() || final_residual > 1e-3 {
            return Err(Error::Subproblem(format!("interior point residual {final_residual:.3e}")));
        }
        Ok(it.x)
    }

    fn plam_qlam(&self, lam: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.p0 + self.p.tr_mul(lam), &self.q0 + self.q.tr_mul(lam))
    }

    fn residual(&self, it: &Iterate, epsi: f64, a0: f64) -> DVector<f64> {
        let n = it.x.len();
        let m = it.y.len();
        let ux1 = &self.upp - &it.x;
        let xl1 = &it.x - &self.low;
        let (plam, qlam) = self.plam_qlam(&it.lam);
        let gvec = &self.p * ux1.map(|v| 1.0 / v) + &self.q * xl1.map(|v| 1.0 / v);

        let mut r = DVector::zeros(3 * n + 4 * m + 2);
        let mut k = 0;
        for j in 0..n {
            r[k] = plam[j] / (ux1[j] * ux1[j]) - qlam[j] / (xl1[j] * xl1[j]) - it.xsi[j] + it.eta[j];
            k += 1;
        }
        for i in 0..m {
            r[k] = self.c[i] + self.d[i] * it.y[i] - it.mu[i] - it.lam[i];
            k += 1;
        }
        r[k] = a0 - it.zet - self.a.dot(&it.lam);
        k += 1;
        for i in 0..m {
            r[k] = gvec[i] - self.a[i] * it.z - it.y[i] + it.s[i] - self.b[i];
            k += 1;
        }
        for j in 0..n {
            r[k] = it.xsi[j] * (it.x[j] - self.alfa[j]) - epsi;
            r[k + 1] = it.eta[j] * (self.beta[j] - it.x[j]) - epsi;
            k += 2;
        }
        for i in 0..m {
            r[k] = it.mu[i] * it.y[i] - epsi;
            r[k + 1] = it.lam[i] * it.s[i] - epsi;
            k += 2;
        }
        r[k] = it.zet * it.z - epsi;
        r
    }

    fn newton_direction(&self, it: &Iterate, epsi: f64, a0: f64) -> Result<Iterate> {
        let n = it.x.len();
        let m = it.y.len();
        let (a, c, d) = (&self.a, &self.c, &self.d);
        let ux1 = &self.upp - &it.x;
        let xl1 = &it.x - &self.low;
        let ux2 = ux1.component_mul(&ux1);
        let xl2 = xl1.component_mul(&xl1);
        let (plam, qlam) = self.plam_qlam(&it.lam);
        let gvec = &self.p * ux1.map(|v| 1.0 / v) + &self.q * xl1.map(|v| 1.0 / v);

        let mut gg = DMatrix::zeros(m, n);
        for j in 0..n {
            for i in 0..m {
                gg[(i, j)] = self.p[(i, j)] / ux2[j] - self.q[(i, j)] / xl2[j];
            }
        }
        let xa = &it.x - &self.alfa;
        let bx = &self.beta - &it.x;

        let delx = DVector::from_fn(n, |j, _| plam[j] / ux2[j] - qlam[j] / xl2[j] - epsi / xa[j] + epsi / bx[j]);
        let dely = DVector::from_fn(m, |i, _| c[i] + d[i] * it.y[i] - it.lam[i] - epsi / it.y[i]);
        let delz = a0 - a.dot(&it.lam) - epsi / it.z;
        let dellam =
            DVector::from_fn(m, |i, _| gvec[i] - a[i] * it.z - it.y[i] - self.b[i] + epsi / it.lam[i]);
        let diagx = DVector::from_fn(n, |j, _| {
            2.0 * (plam[j] / (ux2[j] * ux1[j]) + qlam[j] / (xl2[j] * xl1[j])) + it.xsi[j] / xa[j] + it.eta[j] / bx[j]
        });
        let diagy = DVector::from_fn(m, |i, _| d[i] + it.mu[i] / it.y[i]);
        let diaglamyi = DVector::from_fn(m, |i, _| it.s[i] / it.lam[i] + 1.0 / diagy[i]);

        let (dx, dz, dlam);
        if m < n {
            let blam = &dellam + dely.component_div(&diagy) - &gg * delx.component_div(&diagx);
            let mut aa = DMatrix::zeros(m + 1, m + 1);
            let gdg = &gg * DMatrix::from_diagonal(&diagx.map(|v| 1.0 / v)) * gg.transpose();
            aa.view_mut((0, 0), (m, m)).copy_from(&(gdg + DMatrix::from_diagonal(&diaglamyi)));
            for i in 0..m {
                aa[(i, m)] = a[i];
                aa[(m, i)] = a[i];
            }
            aa[(m, m)] = -it.zet / it.z;
            let mut bb = DVector::zeros(m + 1);
            bb.rows_mut(0, m).copy_from(&blam);
            bb[m] = delz;
            let sol = aa.lu().solve(&bb).ok_or_else(|| Error::Subproblem("singular Newton system".into()))?;
            dlam = sol.rows(0, m).into_owned();
            dz = sol[m];
            dx = (-&delx - gg.tr_mul(&dlam)).component_div(&diagx);
        } else {
            let inv = diaglamyi.map(|v| 1.0 / v);
            let dellamyi = &dellam + dely.component_div(&diagy);
            let mut aa = DMatrix::zeros(n + 1, n + 1);
            let axx = DMatrix::from_diagonal(&diagx) + gg.transpose() * DMatrix::from_diagonal(&inv) * &gg;
            aa.view_mut((0, 0), (n, n)).copy_from(&axx);
            let a_inv = a.component_mul(&inv);
            let azz = it.zet / it.z + a.dot(&a_inv);
            let axz = -gg.tr_mul(&a_inv);
            for j in 0..n {
                aa[(j, n)] = axz[j];
                aa[(n, j)] = axz[j];
            }
            aa[(n, n)] = azz;
            let ratio = dellamyi.component_mul(&inv);
            let bxv = &delx + gg.tr_mul(&ratio);
            let bz = delz - a.dot(&ratio);
            let mut bb = DVector::zeros(n + 1);
            bb.rows_mut(0, n).copy_from(&(-bxv));
            bb[n] = -bz;
            let sol = aa.lu().solve(&bb).ok_or_else(|| Error::Subproblem("singular Newton system".into()))?;
            dx = sol.rows(0, n).into_owned();
            dz = sol[n];
            dlam = (&gg * &dx).component_mul(&inv) - a_inv * dz + ratio;
        }

        let dy = (-&dely + &dlam).component_div(&diagy);
        let dxsi = DVector::from_fn(n, |j, _| -it.xsi[j] + epsi / xa[j] - it.xsi[j] * dx[j] / xa[j]);
        let deta = DVector::from_fn(n, |j, _| -it.eta[j] + epsi / bx[j] + it.eta[j] * dx[j] / bx[j]);
        let dmu = DVector::from_fn(m, |i, _| -it.mu[i] + epsi / it.y[i] - it.mu[i] * dy[i] / it.y[i]);
        let dzet = -it.zet + epsi / it.z - it.zet * dz / it.z;
        let ds = DVector::from_fn(m, |i, _| -it.s[i] + epsi / it.lam[i] - it.s[i] * dlam[i] / it.lam[i]);

        Ok(Iterate { x: dx, y: dy, z: dz, lam: dlam, xsi: dxsi, eta: deta, mu: dmu, zet: dzet, s: ds })
    }
}

#[derive(Debug, Clone)]
struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: f64,
    lam: DVector<f64>,
    xsi: DVector<f64>,
    eta: DVector<f64>,
    mu: DVector<f64>,
    zet: f64,
    s: DVector<f64>,
}

impl Iterate {
    fn advanced(&self, d: &Iterate, t: f64) -> Self {
        Self {
            x: &self.x + &d.x * t,
            y: &self.y + &d.y * t,
            z: self.z + d.z * t,
            lam: &self.lam + &d.lam * t,
            xsi: &self.xsi + &d.xsi * t,
            eta: &self.eta + &d.eta * t,
            mu: &self.mu + &d.mu * t,
            zet: self.zet + d.zet * t,
            s: &self.s + &d.s * t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_point_is_kept() {
        let opts = MmaOptions::default();
        let mut st = MmaState::new(vec![0.3, 0.7], &opts);
        let x = st
            .step(&[0.0, 0.0], &[-1.0], &DMatrix::zeros(1, 2), &[0.0, 0.0], &[1.0, 1.0], &opts)
            .unwrap();
        assert!((x[0] - 0.3).abs() < 1e-6 && (x[1] - 0.7).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn iterates_stay_in_bounds() {
        let opts = MmaOptions::default();
        let mut st = MmaState::new(vec![0.95, 0.05], &opts);
        for _ in 0..10 {
            let x = st.x.clone();
            let g = [-(1.0 - x[0]) * 10.0 - 5.0, 10.0 * x[1] + 5.0];
            let next = st.step(&g, &[-1.0], &DMatrix::zeros(1, 2), &[0.0, 0.0], &[1.0, 1.0], &opts).unwrap();
            assert!(next.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
