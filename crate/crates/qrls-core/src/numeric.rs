//! Small numerical utilities: adaptive quadrature, bisection, seed
//! derivation and basic sample statistics.

/// Adaptive Simpson quadrature of `f` on the finite interval `[a, b]`.
///
/// Classic recursive scheme with Richardson correction; `tol` is an absolute
/// error target. Depth is capped so badly behaved integrands terminate.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Integral of `f` over `[0, inf)` via the substitution `x = t/(1-t)`.
///
/// Requires `x^2 f(x) -> 0` at infinity, which holds for every integrand used
/// here (densities and their first two moment weights).
pub fn integrate_positive_halfline<F: Fn(f64) -> f64>(f: &F, tol: f64) -> f64 {
    let g = |t: f64| {
        if t >= 1.0 - 1e-14 {
            return 0.0;
        }
        let om = 1.0 - t;
        let x = t / om;
        f(x) / (om * om)
    };
    adaptive_simpson(&g, 0.0, 1.0, tol)
}

/// Integral of `f` over the whole real line, split at zero.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: &F, tol: f64) -> f64 {
    let neg = |x: f64| f(-x);
    integrate_positive_halfline(&neg, 0.5 * tol) + integrate_positive_halfline(f, 0.5 * tol)
}

/// Bisection for the root of a monotone increasing `g` on `[lo, hi]`.
///
/// The bracket must satisfy `g(lo) <= 0 <= g(hi)`; iterates until the
/// interval is shorter than `xtol`.
pub fn bisect<F: Fn(f64) -> f64>(g: &F, mut lo: f64, mut hi: f64, xtol: f64) -> f64 {
    for _ in 0..200 {
        if hi - lo <= xtol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// SplitMix64 finalizer; decorrelates derived seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive a stream seed from a master seed and a stream index.
///
/// Serial and parallel consumers derive identical seeds, so run results do
/// not depend on scheduling.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_mul(0x9E3779B97F4A7C15)))
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample standard deviation; `None` for fewer than two points.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Standard error of the mean of a weakly dependent series by batch means.
///
/// Splits the series into `batches` contiguous blocks and uses the spread of
/// block means; robust to short-range autocorrelation.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(xs.len());
    let len = xs.len() / b;
    let means: Vec<f64> = (0..b).map(|i| mean(&xs[i * len..(i + 1) * len])).collect();
    sample_sd(&means).unwrap_or(0.0) / (b as f64).sqrt()
}
