//! Exponential-of-semicircle spreading kernel, its Fourier transform and
//! the accuracy-driven kernel parameters.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Smallest accuracy accepted from users of the double-precision path.
pub const EPS_MIN: f64 = 1e-9;
/// Largest accuracy accepted from users.
pub const EPS_MAX: f64 = 1e-1;
/// Smallest accuracy handed to sub-transforms (strict chunked mode divides ε).
pub(crate) const EPS_FLOOR_INTERNAL: f64 = 1e-14;

/// Default grid upsampling factor.
pub const DEFAULT_UPSAMP: f64 = 1.25;

/// Gauss–Legendre order used for the kernel transform.
pub const FT_QUADRATURE_ORDER: usize = 200;

/// `φ(z) = exp(β(√(1 − z²) − 1))` on `[−1, 1]`, zero outside.
#[inline]
pub fn es_kernel_eval(z: f64, beta: f64) -> f64 {
    if z.abs() > 1.0 {
        return 0.0;
    }
    (beta * ((1.0 - z * z).sqrt() - 1.0)).exp()
}

/// `∫_{−h}^{h} φ(z/h)·cos(ξz) dz` with `h = halfwidth`.
///
/// Evaluated after the substitution `z = h·sin θ`, which removes the square
/// root singularity of `φ` at the support edges, by fixed-order
/// Gauss–Legendre quadrature on `θ ∈ [−π/2, π/2]`.
pub fn es_kernel_ft(xi: f64, beta: f64, halfwidth: f64) -> f64 {
    let (nodes, weights) = gauss_legendre_200();
    let scale = PI / 2.0;
    let mut acc = 0.0;
    for (&t, &w) in nodes.iter().zip(weights) {
        let theta = scale * t;
        let (s, c) = theta.sin_cos();
        acc += w * (beta * (c - 1.0)).exp() * (xi * halfwidth * s).cos() * c;
    }
    acc * scale * halfwidth
}

fn gauss_legendre_200() -> &'static (Vec<f64>, Vec<f64>) {
    static TABLE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    TABLE.get_or_init(|| gauss_legendre(FT_QUADRATURE_ORDER))
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Kernel parameters for one type-3 transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    /// Requested relative accuracy.
    pub eps: f64,
    /// Samples per axis covered by the kernel.
    pub support: usize,
    /// Nominal ES shape parameter.
    pub beta: f64,
    /// Total grid upsampling factor.
    pub upsamp: f64,
}

impl KernelSpec {
    /// Chooses support and shape for accuracy `eps` at upsampling `upsamp`.
    ///
    /// The upsampling is shared evenly between the spreading and the
    /// interpolation side, each of which sees at least `σ = √upsamp`, so
    /// `N_s = ⌈ln(1/ε)/(π√(1 − 1/σ))⌉`. `beta` is the shape at that nominal
    /// `σ`; plans recompute it per axis from the upsampling left after
    /// padding (see [`shape_for`]).
    pub fn for_accuracy(eps: f64, upsamp: f64) -> Result<Self> {
        check_eps(eps, EPS_MIN)?;
        Self::for_accuracy_unchecked(eps, upsamp)
    }

    pub(crate) fn for_accuracy_unchecked(eps: f64, upsamp: f64) -> Result<Self> {
        check_eps(eps, EPS_FLOOR_INTERNAL)?;
        check_upsamp(upsamp)?;
        let sigma = upsamp.sqrt();
        let support = support_for(eps, sigma);
        let beta = shape_for(support, sigma);
        Ok(Self {
            eps,
            support,
            beta,
            upsamp,
        })
    }

    pub fn half_support(&self) -> f64 {
        self.support as f64 / 2.0
    }
}

/// ES shape for `support` samples at per-side upsampling `sigma`.
///
/// Places the first alias image of the band exactly at the kernel's spectral
/// cutoff `2β/N_s`, which balances aliasing against the dynamic range of the
/// deconvolution at low upsampling.
pub fn shape_for(support: usize, sigma: f64) -> f64 {
    PI * (1.0 - 1.0 / (2.0 * sigma)) * support as f64
}

fn support_for(eps: f64, sigma: f64) -> usize {
    let w = ((1.0 / eps).ln() / (PI * (1.0 - 1.0 / sigma).sqrt())).ceil() as usize;
    w.clamp(2, 64)
}

pub(crate) fn check_eps(eps: f64, floor: f64) -> Result<()> {
    if !(eps >= floor && eps <= EPS_MAX) {
        return Err(Error::domain(format!(
            "accuracy {eps:e} outside supported range [{floor:e}, {EPS_MAX:e}]"
        )));
    }
    Ok(())
}

pub(crate) fn check_upsamp(upsamp: f64) -> Result<()> {
    if !(upsamp > 1.0 && upsamp <= 2.0) {
        return Err(Error::domain(format!("upsampling factor {upsamp} outside (1, 2]")));
    }
    Ok(())
}

const SMOOTH_LIMIT: usize = 1 << 24;

fn smooth_table() -> &'static [usize] {
    static TABLE: OnceLock<Vec<usize>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut out = Vec::new();
        let mut p2 = 1usize;
        while p2 <= SMOOTH_LIMIT {
            let mut p3 = p2;
            while p3 <= SMOOTH_LIMIT {
                let mut p5 = p3;
                while p5 <= SMOOTH_LIMIT {
                    out.push(p5);
                    p5 *= 5;
                }
                p3 *= 3;
            }
            p2 *= 2;
        }
        out.sort_unstable();
        out
    })
}

/// Smallest `2^a·3^b·5^c` that is at least `n` (and at least 2).
pub fn next_smooth(n: usize) -> usize {
    let n = n.max(2);
    let table = smooth_table();
    match table.binary_search(&n) {
        Ok(i) => table[i],
        Err(i) if i < table.len() => table[i],
        Err(_) => {
            let mut m = n;
            while !is_smooth(m) {
                m += 1;
            }
            m
        }
    }
}

pub fn is_smooth(mut n: usize) -> bool {
    if n == 0 {
        return false;
    }
    for p in [2, 3, 5] {
        while n.is_multiple_of(p) {
            n /= p;
        }
    }
    n == 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn es_values() {
        assert_eq!(es_kernel_eval(0.0, 7.0), 1.0);
        assert!((es_kernel_eval(1.0, 7.0) - (-7f64).exp()).abs() < 1e-16);
        assert!((es_kernel_eval(-1.0, 7.0) - (-7f64).exp()).abs() < 1e-16);
        assert_eq!(es_kernel_eval(1.0001, 7.0), 0.0);
        // exp(10(√0.75 − 1))
        let want = (10.0 * (0.75f64.sqrt() - 1.0)).exp();
        assert!((es_kernel_eval(0.5, 10.0) - want).abs() < 1e-16);
        assert!((want - 0.261_912).abs() < 1e-6);
    }

    fn trapezoid(xi: f64, beta: f64, h: f64, n: usize) -> f64 {
        let dz = 2.0 * h / n as f64;
        let f = |z: f64| es_kernel_eval(z / h, beta) * (xi * z).cos();
        let mut acc = 0.5 * (f(-h) + f(h));
        for i in 1..n {
            acc += f(-h + i as f64 * dz);
        }
        acc * dz
    }

    #[test]
    fn ft_matches_fine_trapezoid() {
        let got = es_kernel_ft(3.0, 10.0, 1.0);
        let want = trapezoid(3.0, 10.0, 1.0, 1_000_000);
        assert!(((got - want) / want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn ft_is_even_and_mass_at_zero() {
        let beta = 12.0;
        let h = 0.7;
        assert_eq!(es_kernel_ft(2.5, beta, h), es_kernel_ft(-2.5, beta, h));
        let mass = trapezoid(0.0, beta, h, 200_000);
        let ft0 = es_kernel_ft(0.0, beta, h);
        assert!(ft0 > 0.0);
        assert!(((ft0 - mass) / mass).abs() < 1e-9);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(200);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 0.4).abs() < 1e-13);
        let (x5, w5) = gauss_legendre(5);
        let m8: f64 = x5.iter().zip(&w5).map(|(x, w)| w * x.powi(8)).sum();
        assert!((m8 - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(next_smooth(16), 16);
        assert_eq!(next_smooth(17), 18);
        assert_eq!(next_smooth(0), 2);
        assert_eq!(next_smooth(49), 50);
        assert_eq!(next_smooth(97), 100);
        assert_eq!(next_smooth((1 << 24) + 1), 16_796_160);
        for n in 2..2000 {
            let m = next_smooth(n);
            assert!(m >= n && is_smooth(m));
            assert!((n..m).all(|k| !is_smooth(k)));
        }
    }

    #[test]
    fn kernel_grows_with_accuracy() {
        let mut last = 0;
        for e in [1e-1, 1e-3, 1e-5, 1e-7, 1e-9] {
            let k = KernelSpec::for_accuracy(e, DEFAULT_UPSAMP).unwrap();
            assert!(k.support >= last);
            last = k.support;
        }
        assert!(KernelSpec::for_accuracy(1e-10, DEFAULT_UPSAMP).is_err());
        assert!(KernelSpec::for_accuracy(0.5, DEFAULT_UPSAMP).is_err());
        assert!(KernelSpec::for_accuracy(1e-3, 1.0).is_err());
        assert!(KernelSpec::for_accuracy(1e-3, 2.5).is_err());
    }
}
