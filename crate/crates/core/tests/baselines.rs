use pan_core::baselines::{dp_laplace, fit_pca, fl_gaussian, hybrid_transform};
use pan_core::Tensor;

fn mean_sq_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

#[test]
fn laplace_noise_power_is_two_b_squared() {
    let x = Tensor::from_fn(&[1000, 100], |i| (i % 7) as f32 / 7.0);
    for b in [0.1f32, 0.5, 0.9] {
        let y = dp_laplace(&x, b, 5).unwrap();
        let expected = 2.0 * (b as f64).powi(2);
        let got = mean_sq_diff(&x, &y);
        assert!(
            (got / expected - 1.0).abs() < 0.1,
            "b={b}: {got} vs {expected}"
        );
    }
}

#[test]
fn gaussian_noise_power_is_normalized_sigma_squared() {
    let x = Tensor::zeros(&[100_000]);
    let y = fl_gaussian(&x, 40.0, 255.0, 9).unwrap();
    let expected = (40.0f64 / 255.0).powi(2);
    let got = mean_sq_diff(&x, &y);
    assert!((got / expected - 1.0).abs() < 0.1, "{got} vs {expected}");
}

#[test]
fn noise_is_seeded() {
    let x = Tensor::zeros(&[64]);
    assert_eq!(
        dp_laplace(&x, 0.3, 1).unwrap(),
        dp_laplace(&x, 0.3, 1).unwrap()
    );
    assert_ne!(
        dp_laplace(&x, 0.3, 1).unwrap(),
        dp_laplace(&x, 0.3, 2).unwrap()
    );
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j].powi(2))
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (rp, rq) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = c * rp[k] - s * rq[k];
                    a[q][k] = s * rp[k] + c * rq[k];
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn correlated_features(n: usize, d: usize) -> Tensor {
    let mut s = 17u64;
    let mut next = || {
        s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (s >> 40) as f64 / (1u64 << 24) as f64 - 0.5
    };
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let (a, b) = (next() * 4.0, next() * 2.0);
        for j in 0..d {
            data.push((a * (j as f64 + 1.0).sqrt() + b * (j % 3) as f64 + 0.1 * next()) as f32);
        }
    }
    Tensor::new(vec![n, d], data).unwrap()
}

#[test]
fn pca_eigenvalues_match_jacobi_oracle() {
    let (n, d) = (400, 6);
    let x = correlated_features(n, d);
    let data = x.data();
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| data[i * d + j] as f64).sum::<f64>() / n as f64)
        .collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| {
                    (0..n)
                        .map(|i| {
                            (data[i * d + a] as f64 - mean[a]) * (data[i * d + b] as f64 - mean[b])
                        })
                        .sum::<f64>()
                        / n as f64
                })
                .collect()
        })
        .collect();
    let oracle = jacobi_eigenvalues(cov);
    let basis = fit_pca(&x, 2).unwrap();
    for (got, want) in basis.eigenvalues.iter().zip(&oracle) {
        assert!(
            (got - want).abs() < 1e-6 * (1.0 + want.abs()),
            "{got} vs {want}"
        );
    }
}

#[test]
fn pca_reconstruction_error_is_the_discarded_eigenvalue_mass() {
    let (n, d) = (400, 6);
    let x = correlated_features(n, d);
    for keep in 1..=d {
        let basis = fit_pca(&x, keep).unwrap();
        let back = basis
            .reconstruct(&basis.project(&x).unwrap(), x.shape())
            .unwrap();
        let per_sample_sq = mean_sq_diff(&x, &back) * d as f64;
        let discarded: f64 = basis.eigenvalues[keep..].iter().sum();
        assert!(
            (per_sample_sq - discarded).abs() < 1e-4 * (1.0 + discarded),
            "d={keep}: {per_sample_sq} vs {discarded}"
        );
    }
}

#[test]
fn hybrid_without_noise_is_projection() {
    let x = correlated_features(100, 6);
    let basis = fit_pca(&x, 6).unwrap();
    let y = hybrid_transform(&x, &basis, 0.0, 3).unwrap();
    assert!(mean_sq_diff(&x, &y) < 1e-8);
}
