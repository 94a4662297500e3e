use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array3, ArrayView3, ArrayView4, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::grid::Grid;

/// Fourier transforms and spectral calculus on one periodic spatial box.
/// Plans are cached per axis length, so reuse one instance when transforming
/// many slices of the same grid.
pub struct Spectral3 {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    plans: HashMap<(usize, bool), Arc<dyn Fft<f64>>>,
    planner: FftPlanner<f64>,
}

impl Spectral3 {
    pub fn new(grid: &Grid) -> Self {
        Spectral3 {
            nx: grid.nx,
            ny: grid.ny,
            nz: grid.nz,
            lx: grid.lx,
            ly: grid.ly,
            lz: grid.lz,
            plans: HashMap::new(),
            planner: FftPlanner::new(),
        }
    }

    fn plan(&mut self, n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
        let planner = &mut self.planner;
        self.plans
            .entry((n, inverse))
            .or_insert_with(|| {
                let dir = if inverse { FftDirection::Inverse } else { FftDirection::Forward };
                planner.plan_fft(n, dir)
            })
            .clone()
    }

    fn fft_axis(&mut self, a: &mut Array3<Complex64>, axis: usize, inverse: bool) {
        let n = a.shape()[axis];
        let plan = self.plan(n, inverse);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for mut lane in a.lanes_mut(Axis(axis)) {
            for (b, v) in buf.iter_mut().zip(lane.iter()) {
                *b = *v;
            }
            plan.process(&mut buf);
            for (v, b) in lane.iter_mut().zip(buf.iter()) {
                *v = *b;
            }
        }
    }

    /// Unnormalized forward transform of all three axes.
    pub fn fft3(&mut self, a: &mut Array3<Complex64>) {
        for axis in 0..3 {
            self.fft_axis(a, axis, false);
        }
    }

    /// Inverse transform including the 1/(nx ny nz) normalization.
    pub fn ifft3(&mut self, a: &mut Array3<Complex64>) {
        for axis in 0..3 {
            self.fft_axis(a, axis, true);
        }
        let scale = 1.0 / (self.nx * self.ny * self.nz) as f64;
        a.mapv_inplace(|v| v * scale);
    }

    pub fn forward_real(&mut self, re: ArrayView3<'_, f64>) -> Array3<Complex64> {
        let mut a = re.mapv(|v| Complex64::new(v, 0.0));
        self.fft3(&mut a);
        a
    }

    pub fn inverse_to_real(&mut self, hat: &Array3<Complex64>) -> Array3<f64> {
        let mut a = hat.clone();
        self.ifft3(&mut a);
        a.mapv(|v| v.re)
    }

    fn axis_len(&self, axis: usize) -> usize {
        [self.nx, self.ny, self.nz][axis]
    }

    fn axis_box(&self, axis: usize) -> f64 {
        [self.lx, self.ly, self.lz][axis]
    }

    /// Signed integer mode number for bin `i` on an axis of `n` samples.
    fn signed_mode(i: usize, n: usize) -> i64 {
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Angular wavenumber used for differentiation. The Nyquist mode of an
    /// even-length axis maps to zero so odd derivatives of real data keep a
    /// real, symmetric spectrum.
    pub fn deriv_wavenumber(&self, axis: usize, i: usize) -> f64 {
        let n = self.axis_len(axis);
        if n % 2 == 0 && i == n / 2 {
            return 0.0;
        }
        2.0 * std::f64::consts::PI / self.axis_box(axis) * Self::signed_mode(i, n) as f64
    }

    /// Angular wavenumber with the Nyquist mode kept (for |k|^2 factors).
    pub fn wavenumber(&self, axis: usize, i: usize) -> f64 {
        let n = self.axis_len(axis);
        2.0 * std::f64::consts::PI / self.axis_box(axis) * Self::signed_mode(i, n) as f64
    }

    /// Multiply by i*k along `axis`, i.e. differentiate in spectral space.
    pub fn derivative_hat(&self, hat: &Array3<Complex64>, axis: usize) -> Array3<Complex64> {
        let mut out = hat.clone();
        for ((ix, iy, iz), v) in out.indexed_iter_mut() {
            let k = self.deriv_wavenumber(axis, [ix, iy, iz][axis]);
            *v = Complex64::new(0.0, k) * *v;
        }
        out
    }

    /// Sum over the velocity Jacobian of squared entries, evaluated on the
    /// grid: sum_{c,a} (d u_c / d x_a)^2.
    pub fn grad_norm_sq(&mut self, u: ArrayView4<'_, f64>) -> Array3<f64> {
        let mut out = Array3::<f64>::zeros((self.nx, self.ny, self.nz));
        for c in 0..3 {
            let hat = self.forward_real(u.index_axis(Axis(0), c));
            for axis in 0..3 {
                let dhat = self.derivative_hat(&hat, axis);
                let d = self.inverse_to_real(&dhat);
                out.zip_mut_with(&d, |o, &g| *o += g * g);
            }
        }
        out
    }

    /// Largest |div u| on the grid, computed spectrally.
    pub fn max_divergence(&mut self, u: ArrayView4<'_, f64>) -> f64 {
        let mut div_hat = Array3::<Complex64>::zeros((self.nx, self.ny, self.nz));
        for c in 0..3 {
            let hat = self.forward_real(u.index_axis(Axis(0), c));
            let dhat = self.derivative_hat(&hat, c);
            div_hat.zip_mut_with(&dhat, |o, &v| *o += v);
        }
        let div = self.inverse_to_real(&div_hat);
        div.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Project a spectral velocity onto its divergence-free part, using the
    /// same derivative wavenumbers as [`Self::derivative_hat`] so the result
    /// has exactly zero discrete divergence. The k=0 mode is left untouched.
    pub fn leray_project(&self, uhat: &mut [Array3<Complex64>; 3]) {
        for ix in 0..self.nx {
            let kx = self.deriv_wavenumber(0, ix);
            for iy in 0..self.ny {
                let ky = self.deriv_wavenumber(1, iy);
                for iz in 0..self.nz {
                    let kz = self.deriv_wavenumber(2, iz);
                    let k2 = kx * kx + ky * ky + kz * kz;
                    if k2 == 0.0 {
                        continue;
                    }
                    let dot = uhat[0][[ix, iy, iz]] * kx
                        + uhat[1][[ix, iy, iz]] * ky
                        + uhat[2][[ix, iy, iz]] * kz;
                    let f = dot / k2;
                    uhat[0][[ix, iy, iz]] -= f * kx;
                    uhat[1][[ix, iy, iz]] -= f * ky;
                    uhat[2][[ix, iy, iz]] -= f * kz;
                }
            }
        }
    }

    /// Zero all modes with |mode_i| > floor(n_i * frac / 2) on any axis.
    /// `frac = 2/3` is the usual rule for quadratic nonlinearities.
    pub fn dealias(&self, hat: &mut Array3<Complex64>, frac: f64) {
        let cut = |n: usize| (n as f64 * frac / 2.0).floor() as i64;
        let (cx, cy, cz) = (cut(self.nx), cut(self.ny), cut(self.nz));
        for ((ix, iy, iz), v) in hat.indexed_iter_mut() {
            let mx = Self::signed_mode(ix, self.nx).abs();
            let my = Self::signed_mode(iy, self.ny).abs();
            let mz = Self::signed_mode(iz, self.nz).abs();
            if mx > cx || my > cy || mz > cz {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn grid(n: usize) -> Grid {
        let l = 2.0 * std::f64::consts::PI;
        Grid::new(n, n, n, l, l, l, 2, 0.0, 0.1).unwrap()
    }

    #[test]
    fn roundtrip_recovers_signal() {
        let g = grid(8);
        let mut sp = Spectral3::new(&g);
        let mut f = Array3::<f64>::zeros((8, 8, 8));
        for ((ix, iy, iz), v) in f.indexed_iter_mut() {
            let (x, y, z) = (g.hx() * ix as f64, g.hy() * iy as f64, g.hz() * iz as f64);
            *v = (x).sin() * (2.0 * y).cos() + 0.3 * (z).cos();
        }
        let hat = sp.forward_real(f.view());
        let back = sp.inverse_to_real(&hat);
        for (a, b) in f.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_analytic() {
        let g = grid(16);
        let mut sp = Spectral3::new(&g);
        let mut f = Array3::<f64>::zeros((16, 16, 16));
        for ((ix, _, _), v) in f.indexed_iter_mut() {
            *v = (3.0 * g.hx() * ix as f64).sin();
        }
        let hat = sp.forward_real(f.view());
        let dhat = sp.derivative_hat(&hat, 0);
        let d = sp.inverse_to_real(&dhat);
        for ((ix, _, _), v) in d.indexed_iter() {
            let expect = 3.0 * (3.0 * g.hx() * ix as f64).cos();
            assert!((v - expect).abs() < 1e-10, "got {v}, want {expect}");
        }
    }

    #[test]
    fn projection_kills_divergence() {
        let g = grid(12);
        let mut sp = Spectral3::new(&g);
        let mut u = Array4::<f64>::zeros((3, 12, 12, 12));
        for c in 0..3 {
            for ((ix, iy, iz), _) in Array3::<f64>::zeros((12, 12, 12)).indexed_iter() {
                let (x, y, z) = (g.hx() * ix as f64, g.hy() * iy as f64, g.hz() * iz as f64);
                u[[c, ix, iy, iz]] = ((c as f64 + 1.0) * x).sin() * (y + 0.5 * z).cos();
            }
        }
        let mut uhat = [
            sp.forward_real(u.index_axis(Axis(0), 0)),
            sp.forward_real(u.index_axis(Axis(0), 1)),
            sp.forward_real(u.index_axis(Axis(0), 2)),
        ];
        sp.leray_project(&mut uhat);
        let mut up = Array4::<f64>::zeros((3, 12, 12, 12));
        for (c, h) in uhat.iter().enumerate() {
            let r = sp.inverse_to_real(h);
            up.index_axis_mut(Axis(0), c).assign(&r);
        }
        let umax = up.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(sp.max_divergence(up.view()) <= 1e-10 * umax.max(1.0));
    }

    #[test]
    fn dealias_zeroes_high_modes_only() {
        let g = grid(12);
        let mut sp = Spectral3::new(&g);
        let mut f = Array3::<f64>::zeros((12, 12, 12));
        for ((ix, iy, iz), v) in f.indexed_iter_mut() {
            let (x, y, z) = (g.hx() * ix as f64, g.hy() * iy as f64, g.hz() * iz as f64);
            *v = (2.0 * x).sin() + (5.0 * y).cos() + (z).sin();
        }
        let mut hat = sp.forward_real(f.view());
        sp.dealias(&mut hat, 2.0 / 3.0);
        let back = sp.inverse_to_real(&hat);
        // cutoff is floor(12/3) = 4, so mode 5 dies and modes 1, 2 survive
        for ((ix, iy, iz), v) in back.indexed_iter() {
            let (x, _, z) = (g.hx() * ix as f64, g.hy() * iy as f64, g.hz() * iz as f64);
            let _ = iy;
            let expect = (2.0 * x).sin() + (z).sin();
            assert!((v - expect).abs() < 1e-12);
        }
    }
}
