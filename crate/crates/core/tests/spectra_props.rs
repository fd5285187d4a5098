use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use spectest::hermcore::{relative_eigenvalues, HermitianMatrix};
use spectest::simlab::{simulate_var1, VarOneProcess};
use spectest::spectra::{
    cvll_select, default_cvll_grid, dft, kernel_constants, periodogram_at, smoothed_periodogram, KernelShape,
    TimeSeriesSample, WeightKernel,
};

fn sample_strategy(min_n: usize, max_n: usize, max_r: usize) -> impl Strategy<Value = TimeSeriesSample> {
    (min_n..=max_n, 1..=max_r).prop_flat_map(|(n, r)| {
        prop::collection::vec(-5.0f64..5.0, n * r).prop_map(move |v| TimeSeriesSample::new(n, r, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval_per_series(s in sample_strategy(8, 300, 4)) {
        let frame = dft(&s);
        let n = s.n();
        for a in 0..s.r() {
            let lhs: f64 = (0..n as i64).map(|j| periodogram_at(&frame, j)[(a, a)].re).sum::<f64>() * 2.0 * PI / n as f64;
            let rhs: f64 = s.column(a).iter().map(|z| z * z).sum::<f64>() / n as f64;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn dft_matches_direct_sum(s in sample_strategy(8, 80, 3), j in -200i64..200) {
        let frame = dft(&s);
        let n = s.n();
        let lambda = 2.0 * PI * j as f64 / n as f64;
        for a in 0..s.r() {
            let direct: Complex64 = (1..=n)
                .map(|t| Complex64::from_polar(s.get(t - 1, a), lambda * t as f64))
                .sum::<Complex64>()
                / (2.0 * PI * n as f64).sqrt();
            prop_assert!((frame.at(j, a) - direct).norm() <= 1e-10 * (1.0 + direct.norm()));
        }
    }

    #[test]
    fn smoothed_matrices_are_psd_and_scale(s in sample_strategy(40, 200, 3), half_m in 2usize..8, c in 0.01f64..50.0) {
        let m = 2 * half_m;
        prop_assume!(2 * m < s.n() && m + 1 >= s.r());
        for shape in [KernelShape::Flat, KernelShape::RaisedCosine] {
            let k = WeightKernel::new(shape, m).unwrap();
            let f = smoothed_periodogram(&s, &k).unwrap();
            let g = smoothed_periodogram(&s.scaled(c), &k).unwrap();
            let eye = HermitianMatrix::identity(s.r());
            for t in 1..=f.half() {
                let e = relative_eigenvalues(f.at(t), &eye).unwrap();
                prop_assert!(e[0] >= -1e-10 * f.at(t).max_abs());
                let expected = f.at(t).scale(c * c);
                prop_assert!(g.at(t).max_abs_diff(&expected) <= 1e-10 * expected.max_abs());
            }
        }
    }
}

#[test]
fn kernel_constants_converge() {
    for shape in [KernelShape::Flat, KernelShape::RaisedCosine] {
        let a = kernel_constants(|x| shape.eval(x), 1024);
        let b = kernel_constants(|x| shape.eval(x), 2048);
        for (x, y) in [(a.cu, b.cu), (a.du, b.du), (a.bu, b.bu)] {
            assert!((x - y).abs() < 1e-8, "{shape}: {x} vs {y}");
        }
    }
}

/// Closed forms for u(x) = 1 + cos(2πx)/2 on [-1/2, 1/2]: ∫u = 1, ∫u² = 9/8,
/// ∫u⁴ = 1 + 6/8 + 3/128 = 227/128, and ρ(z) = (1−|z|)(1 + cos 2πz/8) + 7 sin(2π|z|)/(16π)
/// integrated by an independent fine trapezoid rule.
#[test]
fn raised_cosine_constants() {
    let k = KernelShape::RaisedCosine.constants();
    assert!((k.cu - 0.5 * 9.0 / 8.0).abs() < 1e-10);
    assert!((k.bu - (81.0 / 64.0) / (227.0 / 128.0)).abs() < 1e-10);
    let rho = |z: f64| {
        let a = z.abs();
        (1.0 - a) * (1.0 + (2.0 * PI * z).cos() / 8.0) + 7.0 * (2.0 * PI * a).sin() / (16.0 * PI)
    };
    let steps = 200_000;
    let h = 2.0 / steps as f64;
    let mut acc = 0.0;
    for i in 0..=steps {
        let z = -1.0 + i as f64 * h;
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        acc += w * rho(z).powi(2);
    }
    let du = 0.5 * acc * h;
    assert!((k.du - du).abs() < 1e-8, "{} vs {du}", k.du);
}

#[test]
fn cvll_scores_finite_on_gaussian_data() {
    let p = VarOneProcess::trivariate_design(0.1).unwrap();
    for (n, seed) in [(101, 1), (201, 2)] {
        let s = simulate_var1(&p, n, 300, seed).unwrap();
        let grid = default_cvll_grid(n, 3);
        let sel = cvll_select(&s, &grid).unwrap();
        assert!(sel.scores.iter().all(|v| v.is_finite()), "{:?}", sel.scores);
        assert!(grid.contains(&sel.m));
    }
}
