use spde_cp::fem::fem_oracle;
use spde_cp::kernels::{MeasurementGrid, MeasurementKernel};
use spde_cp::spectrum::{decompose, evaluate_eigenfunction, inverse_apply_second_derivative};
use spde_cp::DiffusivityProfile;

fn jump_profile() -> DiffusivityProfile {
    DiffusivityProfile::with_tight_band(1.0, 4.0, 0.5).unwrap()
}

#[test]
fn first_eigenvalue_of_the_reference_jump_profile() {
    let p = jump_profile();
    let fem = fem_oracle(&p, 10_000, 1).unwrap();
    let d = decompose(&p, 1, 1e-14).unwrap();
    let lam = d.eigenvalues()[0];
    assert!((lam - fem.eigenvalues[0]).abs() < 1e-6 * lam, "{lam} vs {}", fem.eigenvalues[0]);
    let x = 0.25;
    let e = evaluate_eigenfunction(&d, 1, x).unwrap();
    assert!((e - fem.evaluate(1, x).unwrap()).abs() < 1e-5);
}

#[test]
fn semi_analytic_spectrum_agrees_with_finite_elements() {
    let values = [0.5, 1.0, 2.0, 4.0];
    for &tm in &values {
        for &tp in &values {
            for tau in [0.3, 0.5, 1.0 / 3.0] {
                let p = DiffusivityProfile::with_tight_band(tm, tp, tau).unwrap();
                let d = decompose(&p, 50, 1e-13).unwrap();
                let fem = fem_oracle(&p, 10_000, 50).unwrap();
                for (k, (a, b)) in d.eigenvalues().iter().zip(&fem.eigenvalues).enumerate() {
                    assert!((a - b).abs() < 1e-4 * a, "({tm},{tp},{tau}) mode {}: {a} vs {b}", k + 1);
                }
            }
        }
    }
}

#[test]
fn spectral_sum_converges_to_the_closed_form_inverse() {
    let p = jump_profile();
    let grid = MeasurementGrid::new(10).unwrap();
    let kernel = MeasurementKernel::default();
    let kb = grid.k_bullet(p.tau());
    let d = decompose(&p, 2000, 1e-13).unwrap();
    // <f'', e_k> for f = K_{delta,k_bullet} is the b-coefficient of that site
    let (_, b) = spde_cp::kernels::kernel_eigen_coeffs(&d, &grid, &kernel, kb).unwrap();
    let f = |x: f64| grid.scaled_value(&kernel, kb, x).unwrap();
    for x in [0.33, 0.45, 0.48, 0.52, 0.6, 0.8] {
        let series: f64 = d
            .modes()
            .iter()
            .zip(&b)
            .map(|(m, bk)| bk / m.lambda * m.value(p.tau(), x))
            .sum();
        let closed = inverse_apply_second_derivative(&p, f, x);
        assert!((series + closed).abs() < 1e-3, "x={x}: {series} vs {closed}");
    }
}
