//! Two-dimensional discrete Fourier transforms over the trailing two axes and
//! their polar (amplitude, phase) decomposition.
//!
//! The forward transform is unnormalized and the inverse carries the `1/(H·W)`
//! factor. Any positive extent is accepted.

use std::cell::RefCell;
use std::rc::Rc;

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Tensor};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plane_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [.., h, w] if *h > 0 && *w > 0 => Ok((*h, *w)),
        _ => Err(Error::dim(format!(
            "2D transform needs at least two positive trailing extents, got {shape:?}"
        ))),
    }
}

fn transpose(src: &[Complex<f64>], rows: usize, cols: usize, dst: &mut [Complex<f64>]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// In-place transform of every `h × w` plane in `buf`. No normalization.
fn transform(buf: &mut [Complex<f64>], h: usize, w: usize, direction: FftDirection) {
    let (row_fft, col_fft) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft(w, direction), p.plan_fft(h, direction))
    });
    let mut scratch = vec![Complex::default(); h * w];
    for plane in buf.chunks_mut(h * w) {
        row_fft.process(plane);
        transpose(plane, h, w, &mut scratch);
        col_fft.process(&mut scratch);
        transpose(&scratch, w, h, plane);
    }
}

/// Sets the imaginary part of bins that are their own conjugate partner
/// (both indices in `{0, extent/2}`) to zero. For real input those bins are
/// real, and leaving round-off there would make the phase flip sign at random.
fn snap_self_conjugate(buf: &mut [Complex<f64>], h: usize, w: usize) {
    let rows: &[usize] = if h % 2 == 0 && h > 1 {
        &[0, h / 2]
    } else {
        &[0]
    };
    let cols: &[usize] = if w % 2 == 0 && w > 1 {
        &[0, w / 2]
    } else {
        &[0]
    };
    for plane in buf.chunks_mut(h * w) {
        for &r in rows {
            for &c in cols {
                plane[r * w + c].im = 0.0;
            }
        }
    }
}

fn real_spectrum(x: &Tensor) -> Result<Vec<Complex<f64>>> {
    let (h, w) = plane_dims(x.shape())?;
    let mut buf: Vec<Complex<f64>> = x.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform(&mut buf, h, w, FftDirection::Forward);
    snap_self_conjugate(&mut buf, h, w);
    Ok(buf)
}

fn to_complex(shape: &[usize], buf: Vec<Complex<f64>>) -> Result<ComplexTensor> {
    let (re, im) = buf.into_iter().map(|c| (c.re, c.im)).unzip();
    ComplexTensor::new(shape, re, im)
}

fn from_complex(x: &ComplexTensor) -> Vec<Complex<f64>> {
    x.re()
        .iter()
        .zip(x.im())
        .map(|(&re, &im)| Complex::new(re, im))
        .collect()
}

pub fn fft2(x: &Tensor) -> Result<ComplexTensor> {
    to_complex(x.shape(), real_spectrum(x)?)
}

/// Normalized inverse transform, keeping the complex result.
pub fn ifft2_complex(x: &ComplexTensor) -> Result<ComplexTensor> {
    let (h, w) = plane_dims(x.shape())?;
    let mut buf = from_complex(x);
    transform(&mut buf, h, w, FftDirection::Inverse);
    let scale = 1.0 / (h * w) as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    to_complex(x.shape(), buf)
}

/// Real part of the normalized inverse transform.
pub fn ifft2(x: &ComplexTensor) -> Result<Tensor> {
    Ok(ifft2_complex(x)?.real_part())
}

/// Amplitude `|X|` and phase `atan2(im, re)` in `(-π, π]`.
pub fn to_amp_phase(x: &ComplexTensor) -> (Tensor, Tensor) {
    let shape = x.shape();
    let amp = x
        .re()
        .iter()
        .zip(x.im())
        .map(|(&r, &i)| r.hypot(i))
        .collect();
    let phase = x
        .re()
        .iter()
        .zip(x.im())
        .map(|(&r, &i)| i.atan2(r))
        .collect();
    (
        Tensor::new(shape, amp).expect("shape taken from a valid tensor"),
        Tensor::new(shape, phase).expect("shape taken from a valid tensor"),
    )
}

pub fn from_amp_phase(amp: &Tensor, phase: &Tensor) -> Result<ComplexTensor> {
    amp.expect_same_shape(phase)?;
    let (re, im) = amp
        .data()
        .iter()
        .zip(phase.data())
        .map(|(&a, &p)| {
            let (s, c) = p.sin_cos();
            (a * c, a * s)
        })
        .unzip();
    ComplexTensor::new(amp.shape(), re, im)
}

/// Gradient of a real input given the gradient with respect to the real and
/// imaginary parts of its unnormalized spectrum: `H·W · Re(ifft2(g))`.
fn spectrum_grad_to_input(shape: &[usize], g: Vec<Complex<f64>>) -> Result<Tensor> {
    let (h, w) = plane_dims(shape)?;
    let mut g = g;
    transform(&mut g, h, w, FftDirection::Inverse);
    Tensor::new(shape, g.into_iter().map(|c| c.re).collect())
}

struct AmplitudeBackward {
    shape: Vec<usize>,
    spectrum: Rc<Vec<Complex<f64>>>,
}

impl Backward for AmplitudeBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let g = self
            .spectrum
            .iter()
            .zip(grad.data())
            .map(|(z, &ga)| {
                let a = z.norm();
                if a == 0.0 {
                    Complex::default()
                } else {
                    Complex::new(ga * z.re / a, ga * z.im / a)
                }
            })
            .collect();
        Ok(vec![Some(spectrum_grad_to_input(&self.shape, g)?)])
    }
}

struct PhaseBackward {
    shape: Vec<usize>,
    spectrum: Rc<Vec<Complex<f64>>>,
}

impl Backward for PhaseBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let g = self
            .spectrum
            .iter()
            .zip(grad.data())
            .map(|(z, &gp)| {
                let a2 = z.norm_sqr();
                if a2 == 0.0 {
                    Complex::default()
                } else {
                    Complex::new(-gp * z.im / a2, gp * z.re / a2)
                }
            })
            .collect();
        Ok(vec![Some(spectrum_grad_to_input(&self.shape, g)?)])
    }
}

struct PolarInverseBackward {
    amp: Rc<Tensor>,
    phase: Rc<Tensor>,
}

impl Backward for PolarInverseBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let shape = grad.shape();
        let (h, w) = plane_dims(shape)?;
        let mut g: Vec<Complex<f64>> = grad.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
        transform(&mut g, h, w, FftDirection::Forward);
        let scale = 1.0 / (h * w) as f64;
        let mut ga = Vec::with_capacity(g.len());
        let mut gp = Vec::with_capacity(g.len());
        for ((gz, &a), &p) in g.iter().zip(self.amp.data()).zip(self.phase.data()) {
            let (s, c) = p.sin_cos();
            let (gr, gi) = (gz.re * scale, gz.im * scale);
            ga.push(gr * c + gi * s);
            gp.push(a * (gi * c - gr * s));
        }
        Ok(vec![
            needs[0].then(|| Tensor::new(shape, ga)).transpose()?,
            needs[1].then(|| Tensor::new(shape, gp)).transpose()?,
        ])
    }
}

impl Graph {
    /// Amplitude and phase spectra of a real input.
    pub fn fft_polar(&self, x: &Var) -> Result<(Var, Var)> {
        let spectrum = real_spectrum(x.value())?;
        let (amp, phase) = to_amp_phase(&to_complex(x.shape(), spectrum.clone())?);
        let spectrum = Rc::new(spectrum);
        let amp = self.record("fft_amplitude", &[x], amp, || AmplitudeBackward {
            shape: x.shape().to_vec(),
            spectrum: Rc::clone(&spectrum),
        })?;
        let phase = self.record("fft_phase", &[x], phase, || PhaseBackward {
            shape: x.shape().to_vec(),
            spectrum,
        })?;
        Ok((amp, phase))
    }

    /// Real part of the inverse transform of `amp · e^{i·phase}`.
    pub fn ifft_polar_real(&self, amp: &Var, phase: &Var) -> Result<Var> {
        let out = ifft2(&from_amp_phase(amp.value(), phase.value())?)?;
        self.record("ifft_polar_real", &[amp, phase], out, || {
            PolarInverseBackward {
                amp: amp.shared(),
                phase: phase.shared(),
            }
        })
    }
}
