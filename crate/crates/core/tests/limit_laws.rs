use pdlaws::limit_laws::*;
use pdlaws::quadrature::{integrate, QuadratureControl};
use pdlaws::special_fn::{
    mittag_leffler_density, tilted_trunc_density_inversion, SeriesControl, TruncSubParams,
};
use pdlaws::ModelSpec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use statrs::function::gamma::gamma;

fn qctl(abs: f64, rel: f64) -> QuadratureControl {
    QuadratureControl::new(abs, rel, 4000).unwrap()
}

fn integrate_ok<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, c: &QuadratureControl) -> f64 {
    integrate(f, a, b, c).unwrap().value
}

#[test]
fn determinant_lemma_against_lu() {
    for ai in 1..=9 {
        let alpha = ai as f64 / 10.0;
        for j in 1..=8 {
            let law = build_q_law(alpha, j).unwrap();
            let rel = (law.det_lu - law.det_q).abs() / law.det_q;
            assert!(rel < 1e-10, "α={alpha} J={j}: rel {rel:e}");
            let dev = (&law.q_mat * &law.q_inv - nalgebra::DMatrix::identity(j, j))
                .abs()
                .max();
            assert!(dev < 1e-10, "α={alpha} J={j}: |QQ⁻¹-I| = {dev:e}");
        }
    }
}

#[test]
fn q_law_hand_values() {
    let l1 = build_q_law(0.5, 1).unwrap();
    assert_eq!(l1.q, vec![0.5]);
    assert!((l1.det_q - 0.25).abs() < 1e-15);
    let l2 = build_q_law(0.5, 2).unwrap();
    assert!((l2.q[0] - 0.5).abs() < 1e-15 && (l2.q[1] - 0.125).abs() < 1e-15);
    assert!((l2.det_q - 0.0234375).abs() < 1e-16);
    for alpha in [0.2, 0.7] {
        let q = q_vector(alpha, 5).unwrap();
        for (i, &qj) in q.iter().enumerate() {
            let j = (i + 1) as f64;
            let direct = alpha * gamma(j - alpha) / (gamma(j + 1.0) * gamma(1.0 - alpha));
            assert!((qj - direct).abs() < 1e-13 * direct);
        }
    }
}

#[test]
fn q_law_rejects_bad_input() {
    assert!(build_q_law(0.5, 0).is_err());
    assert!(build_q_law(1.5, 2).is_err());
}

#[test]
fn conditional_normal_at_origin() {
    for j in 1..=3 {
        let law = build_q_law(0.4, j).unwrap();
        for x in [0.3, 1.0, 2.5] {
            let v = conditional_normal_density(&law, x, &vec![0.0; j]).unwrap();
            let want = x.powf(j as f64 / 2.0)
                / ((2.0 * std::f64::consts::PI).powi(j as i32) * law.det_q).sqrt();
            assert!((v - want).abs() < 1e-13 * want);
        }
    }
    let law = build_q_law(0.4, 1).unwrap();
    assert!(conditional_normal_density(&law, 0.0, &[0.0]).is_err());
    assert!(conditional_normal_density(&law, 1.0, &[0.0, 1.0]).is_err());
}

fn nested<F: Fn(&[f64]) -> f64>(f: &F, bounds: &[f64], prefix: &mut Vec<f64>, c: &QuadratureControl) -> f64 {
    let d = prefix.len();
    if d == bounds.len() {
        return f(prefix);
    }
    let b = bounds[d];
    integrate_ok(
        |t| {
            let mut p = prefix.clone();
            p.push(t);
            nested(f, bounds, &mut p, c)
        },
        -b,
        b,
        c,
    )
}

#[test]
fn conditional_normal_integrates_to_one() {
    let c = qctl(1e-14, 1e-11);
    for j in 1..=3 {
        let law = build_q_law(0.5, j).unwrap();
        let x = 1.7;
        let bounds: Vec<f64> = (0..j).map(|d| 12.0 * (law.q_mat[(d, d)] / x).sqrt()).collect();
        let total = nested(
            &|y: &[f64]| conditional_normal_density(&law, x, y).unwrap(),
            &bounds,
            &mut Vec::new(),
            &c,
        );
        assert!((total - 1.0).abs() < 1e-8, "J={j}: {total}");
    }
}

#[test]
fn stable_y_marginal_is_mittag_leffler() {
    let c = qctl(1e-15, 1e-12);
    let sctl = SeriesControl::default();
    for alpha in [0.3, 0.5, 0.8] {
        let law = build_q_law(alpha, 1).unwrap();
        for x in [0.2, 0.7, 1.0, 1.6, 3.0] {
            let b = 14.0 * (law.q_mat[(0, 0)] / x).sqrt();
            let m = integrate_ok(
                |y| limit_density_stable(alpha, &law, x, &[y]).unwrap(),
                -b,
                b,
                &c,
            );
            let ml = mittag_leffler_density(alpha, x, &sctl).unwrap();
            assert!((m - ml).abs() < 1e-8, "α={alpha} x={x}: {m} vs {ml}");
        }
    }
}

#[test]
fn stable_joint_integrates_to_one_and_factorizes() {
    let alpha = 0.5;
    let law = build_q_law(alpha, 1).unwrap();
    let x_max = 2.0 * ml_tail_cutoff(alpha, 1e-12).unwrap();
    let c = qctl(1e-12, 1e-9);
    let total = integrate_ok(
        |x| {
            if x <= 0.0 {
                return 0.0;
            }
            let b = 12.0 * (law.q_mat[(0, 0)] / x).sqrt();
            integrate_ok(
                |y| limit_density_stable(alpha, &law, x, &[y]).unwrap(),
                -b,
                b,
                &c,
            )
        },
        0.0,
        x_max,
        &c,
    );
    assert!((total - 1.0).abs() < 1e-4, "{total}");
    for (x, y) in [(0.5, 0.3), (1.2, -1.0), (2.0, 0.05)] {
        let joint = limit_density_stable(alpha, &law, x, &[y]).unwrap();
        let split = stable_marginal(alpha, x).unwrap() * conditional_normal_density(&law, x, &[y]).unwrap();
        assert!((joint - split).abs() <= 1e-10 * split);
    }
}

#[test]
fn pitman_reduces_to_stable_at_zero_theta() {
    let law = build_q_law(0.5, 2).unwrap();
    for (x, y) in [(0.4, [0.1, -0.2]), (1.0, [0.0, 0.0]), (2.2, [-0.3, 0.4])] {
        let p = limit_density_pitman(0.5, 0.0, &law, x, &y).unwrap();
        let s = limit_density_stable(0.5, &law, x, &y).unwrap();
        assert!((p - s).abs() < 1e-10 * s, "x={x}: {p} vs {s}");
    }
}

#[test]
fn pitman_marginal_normalizes() {
    let c = qctl(1e-13, 1e-10);
    for (alpha, theta) in [(0.5, 1.0), (0.3, 2.0), (0.7, -0.5)] {
        let x_max = 4.0 * ml_tail_cutoff(alpha, 1e-14).unwrap();
        let total = integrate_ok(
            |x| if x <= 0.0 { 0.0 } else { pitman_marginal(alpha, theta, x).unwrap() },
            0.0,
            x_max,
            &c,
        );
        assert!((total - 1.0).abs() < 1e-4, "α={alpha} θ={theta}: {total}");
    }
    assert!(pitman_marginal(0.5, -0.6, 1.0).is_err());
}

#[test]
fn ewens_product_law() {
    let theta = 1.3;
    let h3: f64 = 1.0 + 0.5 + 1.0 / 3.0;
    let v = limit_density_ewens(theta, &[0, 0, 0], 40.0).unwrap();
    assert!((v - (-theta * h3).exp()).abs() < 1e-15);
    let v = limit_density_ewens(1.0, &[1], 0.0).unwrap();
    assert!((v - 0.5 * (-1.0f64).exp()).abs() < 1e-16);
    // summing the Poisson factors recovers Φ(c)
    let c = 0.37;
    let mut s = 0.0;
    for a in 0..60u32 {
        for b in 0..60u32 {
            s += limit_density_ewens(theta, &[a, b], c).unwrap();
        }
    }
    assert!((s - std_normal_cdf(c)).abs() < 1e-13);
    assert!(limit_density_ewens(0.0, &[0], 0.0).is_err());
}

#[test]
fn transport_table_matches_inversion() {
    let ctl = TrimmedControl::default();
    for (alpha, x) in [(0.5, 0.7), (0.5, 1.5), (0.3, 1.0), (0.7, 1.0)] {
        let prof = LowerProfile::compute(alpha, x, &ctl).unwrap();
        let ext = prof.extrapolated();
        let nc = ext.len() - 1;
        for lam in [0.3, 0.5, 0.8] {
            let (l, v) = ext[(lam * nc as f64).round() as usize];
            let p = TruncSubParams::new(alpha, x, l).unwrap();
            let inv = tilted_trunc_density_inversion(&p, 1.0).unwrap();
            assert!(
                (v - inv).abs() < 1e-5 * inv + 1e-10,
                "α={alpha} x={x} λ={l}: table {v} inversion {inv}"
            );
        }
    }
}

#[test]
fn trimmed_split_matches_direct_evaluation() {
    let ctl = TrimmedControl::default();
    let q = QuadratureControl::default();
    for r in [0.5, 1.0, 2.0, 3.5] {
        for x in [0.3, 1.0, 2.5] {
            let split = trimmed_marginal(0.5, r, x, &ctl).unwrap();
            let direct = trimmed_marginal_direct(0.5, r, x, &ctl, &q).unwrap();
            assert!(
                (split - direct).abs() < 1e-6 * direct,
                "r={r} x={x}: split {split} direct {direct}"
            );
        }
    }
}

#[test]
fn trimmed_y_marginal_matches_direct() {
    let ctl = TrimmedControl::default();
    let law = build_q_law(0.5, 1).unwrap();
    let c = qctl(1e-15, 1e-12);
    for x in [0.4, 1.3] {
        let direct = trimmed_marginal_direct(0.5, 1.0, x, &ctl, &QuadratureControl::default()).unwrap();
        let m = trimmed_marginal(0.5, 1.0, x, &ctl).unwrap();
        let b = 14.0 * (law.q_mat[(0, 0)] / x).sqrt();
        let yint = integrate_ok(
            |y| m * conditional_normal_density(&law, x, &[y]).unwrap(),
            -b,
            b,
            &c,
        );
        assert!((yint - direct).abs() < 1e-6 * direct);
        let joint = limit_density_trimmed(0.5, 1.0, &law, x, &[0.2], &ctl).unwrap();
        let fact = m * conditional_normal_density(&law, x, &[0.2]).unwrap();
        assert!((joint - fact).abs() <= 1e-10 * fact);
    }
}

/// Composite Gauss-Legendre rule with `panels` equal panels, for a
/// vector-valued integrand.
fn composite_gl<F: FnMut(f64) -> Vec<f64>>(mut f: F, a: f64, b: f64, panels: usize, order: usize) -> Vec<f64> {
    let (nodes, weights) = pdlaws::quadrature::gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut s: Vec<f64> = Vec::new();
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (t, w) in nodes.iter().zip(&weights) {
            let v = f(lo + 0.5 * h * (t + 1.0));
            s.resize(v.len(), 0.0);
            for (acc, vi) in s.iter_mut().zip(v) {
                *acc += 0.5 * h * w * vi;
            }
        }
    }
    s
}

#[test]
fn trimmed_marginal_normalizes() {
    let ctl = TrimmedControl::default();
    let x_max = 2.0 * ml_tail_cutoff(0.5, 1e-12).unwrap();
    let rs = [1.0, 2.0, 0.5];
    // the table's extrapolation noise defeats adaptive refinement, so a
    // fixed rule is used; the 1e-3 target is far above both errors
    let totals = composite_gl(
        |x| {
            let prof = LowerProfile::compute(0.5, x, &ctl).unwrap();
            rs.iter()
                .map(|&r| trimmed_parts_from_profile(&prof, r).unwrap().total())
                .collect()
        },
        0.0,
        x_max,
        12,
        20,
    );
    for (t, r) in totals.iter().zip(rs) {
        assert!((t - 1.0).abs() < 1e-3, "r={r}: {t}");
    }
}

#[test]
fn lower_part_vanishes_as_r_decreases() {
    let ctl = TrimmedControl::default();
    let prof = LowerProfile::compute(0.5, 1.0, &ctl).unwrap();
    let mut last = f64::INFINITY;
    for r in [1.0, 0.1, 0.01, 0.001] {
        let p = trimmed_parts_from_profile(&prof, r).unwrap();
        let frac = p.lower / p.total();
        assert!(frac < last, "r={r}: {frac}");
        last = frac;
    }
    assert!(last < 1e-3, "{last}");
}

#[test]
fn trimmed_tends_to_stable_as_r_decreases() {
    let ctl = TrimmedControl::default();
    let law = build_q_law(0.5, 1).unwrap();
    for (x, y) in [(0.6, [0.3]), (1.0, [0.0]), (1.8, [-0.4])] {
        let target = limit_density_stable(0.5, &law, x, &y).unwrap();
        let mut last = f64::INFINITY;
        for r in [1.0, 0.1, 0.01] {
            let v = limit_density_trimmed(0.5, r, &law, x, &y, &ctl).unwrap();
            let gap = (v - target).abs() / target;
            assert!(gap < last, "x={x} r={r}: gap {gap}");
            last = gap;
        }
        assert!(last < 5e-2, "x={x}: gap {last}");
    }
}

#[test]
fn joint_density_rejects_ewens() {
    assert!(JointLimitDensity::new(ModelSpec::Ewens { theta: 1.0 }, 1).is_err());
    let j = JointLimitDensity::new(ModelSpec::StablePd { alpha: 0.5 }, 2).unwrap();
    assert!(j.density(1.0, &[0.0, 0.0]).unwrap() > 0.0);
}

#[test]
fn tabulated_cdf_has_unit_mass() {
    let cdf = LimitCdf::build(
        &ModelSpec::PitmanYor { alpha: 0.5, theta: 1.0 },
        &TrimmedControl::default(),
    )
    .unwrap();
    assert!((cdf.mass() - 1.0).abs() < 1e-8, "{}", cdf.mass());
    let mut prev = 0.0;
    for i in 0..50 {
        let v = cdf.eval(i as f64 * 0.1).unwrap();
        assert!(v >= prev);
        prev = v;
    }
}

#[test]
fn corollary_passes_on_exact_draws() {
    let law = build_q_law(0.5, 2).unwrap();
    let joint = JointLimitDensity::new(ModelSpec::StablePd { alpha: 0.5 }, 2).unwrap();
    let x_max = 2.0 * ml_tail_cutoff(0.5, 1e-12).unwrap();
    let sampler = GridSampler::new(&joint, x_max, 4000).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let draws: Vec<_> = (0..100_000).map(|_| sampler.sample(&mut rng)).collect();
    let rep = corollary_transform_check(&law, &draws).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.max_corr_x < 0.02);

    let law1 = build_q_law(0.5, 1).unwrap();
    let joint1 = JointLimitDensity::new(ModelSpec::StablePd { alpha: 0.5 }, 1).unwrap();
    let s1 = GridSampler::new(&joint1, x_max, 4000).unwrap();
    let draws: Vec<_> = (0..100_000).map(|_| s1.sample(&mut rng)).collect();
    let rep = corollary_transform_check(&law1, &draws).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!((rep.covariance[0] - 0.25).abs() < 3.0 * 0.25 * (2.0f64 / 1e5).sqrt());
}

#[test]
fn corollary_detects_dependence() {
    let law = build_q_law(0.5, 1).unwrap();
    // y that does not shrink with x leaves √x·y correlated with x
    let draws: Vec<_> = (1..=20_000)
        .map(|i| {
            let x = 0.2 + (i % 97) as f64 * 0.03;
            let y = if i % 2 == 0 { 0.5 } else { -0.5 };
            (x, vec![y * (1.0 + x)])
        })
        .collect();
    let rep = corollary_transform_check(&law, &draws).unwrap();
    assert!(!rep.pass);
}

#[test]
fn density_grid_csv_layout() {
    let joint = JointLimitDensity::new(ModelSpec::StablePd { alpha: 0.5 }, 2).unwrap();
    let g = DensityGrid::joint(&joint, &[0.5, 1.0], &[-0.1, 0.1]).unwrap();
    let csv = g.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,y1,y2,density"));
    assert_eq!(csv.lines().count(), 5);
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    let want = joint.density(0.5, &[-0.1, -0.1]).unwrap();
    assert_eq!(row[3], want);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_determinant_lemma(alpha in 0.05f64..0.95, j in 1usize..=8) {
        let law = build_q_law(alpha, j).unwrap();
        prop_assert!((law.det_lu - law.det_q).abs() <= 1e-10 * law.det_q);
    }

    #[test]
    fn prop_gaussian_scaling(alpha in 0.1f64..0.9, x in 0.05f64..5.0, y0 in -2.0f64..2.0, y1 in -2.0f64..2.0) {
        let law = build_q_law(alpha, 2).unwrap();
        let y = [y0, y1];
        let lhs = conditional_normal_density(&law, x, &y).unwrap();
        let ys = [x.sqrt() * y0, x.sqrt() * y1];
        let rhs = conditional_normal_density(&law, 1.0, &ys).unwrap() * x;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn prop_densities_nonnegative(alpha in 0.1f64..0.9, theta in 0.0f64..3.0, x in 0.01f64..6.0, y in -3.0f64..3.0) {
        let law = build_q_law(alpha, 1).unwrap();
        prop_assert!(limit_density_stable(alpha, &law, x, &[y]).unwrap() >= 0.0);
        prop_assert!(limit_density_pitman(alpha, theta, &law, x, &[y]).unwrap() >= 0.0);
    }

    #[test]
    fn prop_pitman_factorizes(alpha in 0.1f64..0.9, theta in 0.0f64..3.0, x in 0.05f64..4.0, y in -2.0f64..2.0) {
        let law = build_q_law(alpha, 1).unwrap();
        let joint = limit_density_pitman(alpha, theta, &law, x, &[y]).unwrap();
        let split = pitman_marginal(alpha, theta, x).unwrap() * conditional_normal_density(&law, x, &[y]).unwrap();
        prop_assert!((joint - split).abs() <= 1e-10 * split.max(1e-300));
    }
}
