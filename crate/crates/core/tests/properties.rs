use dred::analysis::{self, LyapunovParams};
use dred::graph::{self, LTildeMode};
use dred::numerics::{self, norm, power_sum, signed_power, vec_signed_power, Cholesky, Mat};
use dred::protocol::{self, design_gains, dilate, normalized_field, GainSchedule, StateBlock};
use proptest::prelude::*;

fn vector(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), -1e3..1e3f64], 1..=max_len)
}

fn symmetric(max_n: usize) -> impl Strategy<Value = Mat> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-10.0..10.0f64, n * n).prop_map(move |v| {
            let mut m = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let x = v[i * n + j];
                    m[(i, j)] = x;
                    m[(j, i)] = x;
                }
            }
            m
        })
    })
}

fn network() -> impl Strategy<Value = dred::graph::Network> {
    (2usize..=10, 0.0..0.6f64, any::<u64>())
        .prop_flat_map(|(n, p, seed)| (Just(n), Just(p), 1..=n, Just(seed)))
        .prop_map(|(n, p, l, seed)| graph::random_connected(n, p, l, seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn signed_power_norm_bound(v in vector(8), alpha in 0.01..0.99f64) {
        let n = v.len() as f64;
        let lhs = norm(&vec_signed_power(&v, alpha).unwrap());
        let rhs = n.powf((1.0 - alpha) / 2.0) * norm(&v).powf(alpha);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn power_sum_dominates_norm(v in vector(8), alpha in 0.01..0.99f64) {
        prop_assert!(power_sum(&v, alpha).unwrap() >= norm(&v).powf(alpha) * (1.0 - 1e-12));
    }

    #[test]
    fn signed_power_is_monotone(v in vector(8), seed in any::<u64>(), alpha in 0.01..3.0f64, same in any::<bool>()) {
        let w: Vec<f64> = if same {
            v.clone()
        } else {
            v.iter().enumerate().map(|(i, x)| x + ((seed >> (i % 60)) & 7) as f64 - 3.5).collect()
        };
        let value: f64 = v.iter().zip(&w)
            .map(|(a, b)| (a - b) * (signed_power(*a, alpha).unwrap() - signed_power(*b, alpha).unwrap()))
            .sum();
        if same {
            prop_assert_eq!(value, 0.0);
        } else {
            prop_assert!(value > 0.0);
        }
    }

    #[test]
    fn eigen_reconstruction(m in symmetric(20)) {
        let e = numerics::symmetric_eigen(&m).unwrap();
        let n = m.rows();
        let scale = m.frobenius_norm().max(1.0);
        let mut rebuilt = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                rebuilt[(i, j)] = (0..n).map(|k| e.vectors[(i, k)] * e.values[k] * e.vectors[(j, k)]).sum();
            }
        }
        let gap: f64 = rebuilt.add(&m.scale(-1.0)).unwrap().frobenius_norm();
        prop_assert!(gap <= 1e-10 * scale, "gap {gap}");
        let vtv = e.vectors.transpose().matmul(&e.vectors).unwrap();
        prop_assert!(vtv.add(&Mat::identity(n).scale(-1.0)).unwrap().frobenius_norm() <= 1e-10);
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn cholesky_solves(net in network(), b in prop::collection::vec(-5.0..5.0f64, 10)) {
        let h = net.laplacian().add(&net.leader_matrix()).unwrap();
        let b = &b[..net.n_agents()];
        let x = Cholesky::new(&h).unwrap().solve(b).unwrap();
        let r = h.matvec(&x).unwrap();
        let res: f64 = r.iter().zip(b).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        prop_assert!(res <= 1e-9 * (1.0 + numerics::norm_inf(b)));
    }

    #[test]
    fn h_is_positive_definite_and_hinvb_is_ones(net in network()) {
        let s = graph::spectra(&net, 1.0, LTildeMode::Singular).unwrap();
        prop_assert!(s.h_min_eig > 0.0);
        prop_assert!(graph::check_prop1(&s).unwrap() <= 1e-9);
        prop_assert!(s.rho_hinvb <= 1.0 + 1e-9);
        prop_assert!(s.sigma_max_hinvb >= 1.0 - 1e-9);
    }

    #[test]
    fn normalized_field_homogeneity(net in network(), m in 1usize..=3, seed in any::<u64>()) {
        let n = net.n_agents();
        let h = net.laplacian().add(&net.leader_matrix()).unwrap();
        let k: Vec<f64> = (0..=m).map(|mu| 1.0 + ((seed >> (8 * mu)) & 0xff) as f64 / 64.0).collect();
        let mut z = StateBlock::zeros(n, m);
        for i in 0..n {
            for mu in 0..=m {
                let bits = seed.rotate_left((i * 7 + mu * 13) as u32) & 0xffff;
                z.set(i, mu, bits as f64 / 16384.0 - 2.0);
            }
        }
        let f = normalized_field(&z, &h, &k).unwrap();
        let hz0 = h.matvec(&z.order_column(0)).unwrap();
        for lambda in [0.5, 2.0, 10.0] {
            let lhs = normalized_field(&dilate(&z, lambda), &h, &k).unwrap();
            for mu in 0..=m {
                let w = lambda.powi((m - mu) as i32);
                let alpha = (m - mu) as f64 / (m + 1) as f64;
                for i in 0..n {
                    let next = if mu < m { z.get(i, mu + 1).abs() } else { 0.0 };
                    let scale = w * (next + k[mu] * hz0[i].abs().powf(alpha)).max(1e-300);
                    let rel = (lhs.get(i, mu) - w * f.get(i, mu)).abs() / scale;
                    prop_assert!(rel <= 1e-9, "lambda {lambda} mu {mu}: {rel}");
                }
            }
        }
    }

    #[test]
    fn protocol_step_is_permutation_equivariant(net in network(), seed in any::<u64>()) {
        let n = net.n_agents();
        let g = design_gains(2, &[3.0, 1.5, 1.2], 0.7).unwrap();
        let mut x = StateBlock::zeros(n, 2);
        for i in 0..n {
            for mu in 0..=2 {
                x.set(i, mu, ((seed.rotate_left((3 * i + mu) as u32) & 0xfff) as f64) / 512.0 - 4.0);
            }
        }
        let u = vec![0.3; n];
        let perm: Vec<usize> = (0..n).map(|i| (i + 1 + (seed % n as u64) as usize) % n).collect();
        let step = protocol::sampled_step(&x, &u, 1e-3, &net, &g).unwrap();
        let pnet = net.permuted(&perm).unwrap();
        let pstep = protocol::sampled_step(&x.permuted(&perm), &u, 1e-3, &pnet, &g).unwrap();
        let back = step.permuted(&perm);
        for i in 0..n {
            for mu in 0..=2 {
                prop_assert!((back.get(i, mu) - pstep.get(i, mu)).abs() <= 1e-12 * (1.0 + back.get(i, mu).abs()));
            }
        }
    }

    #[test]
    fn eta0_is_nonnegative(net in network(), seed in any::<u64>()) {
        let n = net.n_agents();
        let s = graph::spectra(&net, 1.0, LTildeMode::Singular).unwrap();
        let g = GainSchedule::explicit(1, &[3.0, 1.5], 1.0).unwrap();
        let pts = numerics::unit_sphere_grid(2 * n, 50, seed).unwrap();
        for z in pts {
            let (eta0, _) = analysis::eta0_gamma0(&z[..n], &z[n..], &s.h, &g, 5.0).unwrap();
            prop_assert!(eta0 >= -1e-12);
        }
    }

    #[test]
    fn lyapunov_is_positive_when_m_matrix_is(net in network(), seed in any::<u64>(), extra in 0.01..2.0f64) {
        let n = net.n_agents();
        let s = graph::spectra(&net, 1.0, LTildeMode::Singular).unwrap();
        let h = 2.0 * s.h_inv_max_eig * (1.0 + extra);
        prop_assert!(analysis::m_matrix_pd(&s.h, h).unwrap().positive_definite);
        for z in numerics::unit_sphere_grid(2 * n, 40, seed).unwrap() {
            let scale = 0.5 + (seed % 7) as f64;
            let z0: Vec<f64> = z[..n].iter().map(|v| v * scale).collect();
            let z1: Vec<f64> = z[n..].iter().map(|v| v * scale).collect();
            prop_assert!(analysis::lyapunov_v(&z0, &z1, &s.h, h).unwrap() > 0.0);
        }
    }
}

/// All `{-1, +1}^n` vectors.
fn corners(n: usize) -> Vec<Vec<f64>> {
    (0..1usize << n)
        .map(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect())
        .collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[test]
fn closed_form_sup_matches_corner_enumeration() {
    for n in 1..=4 {
        for seed in 0..25u64 {
            let net = if n == 1 {
                graph::path_graph(1).unwrap().with_leaders([0]).unwrap()
            } else {
                graph::random_connected(n, 0.4, 1 + (seed as usize % n), seed).unwrap()
            };
            let s = graph::spectra(&net, 1.0, LTildeMode::Singular).unwrap();
            let k1 = 1.1 + seed as f64 * 0.2;
            let g = GainSchedule::explicit(1, &[2.0, k1], 1.0).unwrap();
            let h = 3.0 + seed as f64;
            let p = LyapunovParams::from_gains(&g, h).unwrap();
            for z in numerics::unit_sphere_grid(2 * n, 40, seed).unwrap() {
                let (z0, z1) = z.split_at(n);
                let hz0 = s.h.matvec(z0).unwrap();

                // gamma0: a = k~1 (2 z0 |z1| + h z1^3), worst case over xi.
                let a: Vec<f64> = (0..n)
                    .map(|i| p.k_tilde1 * (2.0 * z0[i] * z1[i].abs() + h * z1[i].powi(3)))
                    .collect();
                let brute0 = corners(n)
                    .iter()
                    .map(|xi| -(0..n).map(|i| a[i] * (sign(hz0[i]) + xi[i] / k1)).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                let (_, gamma0) = analysis::eta0_gamma0(z0, z1, &s.h, &g, h).unwrap();
                assert!(
                    (gamma0 - brute0).abs() <= 1e-12 * (1.0 + brute0.abs()),
                    "{gamma0} vs {brute0}"
                );

                // gamma1: b = 2 (H^-1 z1^2 sign(z1)) |z1|.
                let sq: Vec<f64> = z1.iter().map(|v| v * v.abs()).collect();
                let w = numerics::spd_solve(&s.h, &sq).unwrap();
                let b: Vec<f64> = (0..n).map(|i| 2.0 * w[i] * z1[i].abs()).collect();
                let brute1 = corners(n)
                    .iter()
                    .map(|xi| -(0..n).map(|i| b[i] * (sign(z1[i]) + xi[i] / k1)).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                let (_, gamma1) = analysis::eta1_gamma1(z1, &s.h, k1).unwrap();
                assert!(
                    (gamma1 - brute1).abs() <= 1e-12 * (1.0 + brute1.abs()),
                    "{gamma1} vs {brute1}"
                );
            }
        }
    }
}
