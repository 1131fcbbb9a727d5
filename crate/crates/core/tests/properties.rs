//! Randomized invariants checked against independent oracles.

use lipgan::autodiff::{check_gradient, Tape};
use lipgan::data::{Batch2D, Dataset, Rng};
use lipgan::emd::{brute_force_assignment, brute_force_emd, emd, hungarian, CostMatrix};
use lipgan::nets::{affine_critic, init_mlp, Activation, MlpParams, RmsProp, RmsPropConfig, Role};
use lipgan::penalty::{
    batch_std, gradient_norm_values, interpolate, penalty_gp, penalty_lp, sample_local_perturbation,
};
use lipgan::tensor::Tensor;
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    -3.0..3.0f64
}

fn points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec([coord(), coord()], n)
}

/// Two batches of the same size.
fn pair(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    n.prop_flat_map(|n| (points(n..n + 1), points(n..n + 1)))
}

fn batch(p: &[[f64; 2]]) -> Batch2D<f64> {
    Batch2D::from_points(p).unwrap()
}

fn tanh_critic(seed: u64, width: usize) -> MlpParams<f64> {
    init_mlp(&mut Rng::new(seed), Role::Critic, width, Activation::Tanh).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hungarian_matches_exhaustive_search(n in 1usize..7, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let costs: Vec<f64> = (0..n * n).map(|_| rng.uniform() * 100.0).collect();
        let c = CostMatrix::new(n, costs).unwrap();
        let fast = hungarian(&c);
        prop_assert!((fast.total_cost - brute_force_assignment(&c).total_cost).abs() < 1e-9);
        let mut seen = fast.perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn emd_is_symmetric_and_zero_on_self((a, b) in pair(1..8)) {
        let (a, b) = (batch(&a), batch(&b));
        prop_assert_eq!(emd(&a, &a).unwrap(), 0.0);
        prop_assert!((emd(&a, &b).unwrap() - emd(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((emd(&a, &b).unwrap() - brute_force_emd(&a, &b).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn emd_triangle_inequality(((a, b), c) in pair(1..7).prop_flat_map(|(a, b)| {
        let n = a.len();
        (Just((a, b)), points(n..n + 1))
    })) {
        let (a, b, c) = (batch(&a), batch(&b), batch(&c));
        let ab = emd(&a, &b).unwrap();
        let bc = emd(&b, &c).unwrap();
        let ac = emd(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn emd_translation_and_scale((a, b) in pair(1..10), tx in coord(), ty in coord(), s in 0.1..10.0f64) {
        let (a, b) = (batch(&a), batch(&b));
        let base = emd(&a, &b).unwrap();
        let moved = emd(&a.affine(1.0, [tx, ty]).unwrap(), &b.affine(1.0, [tx, ty]).unwrap()).unwrap();
        prop_assert!((moved - base).abs() < 1e-9);
        let scaled = emd(&a.affine(s, [0.0, 0.0]).unwrap(), &b.affine(s, [0.0, 0.0]).unwrap()).unwrap();
        prop_assert!((scaled - s * base).abs() < 1e-9 * (1.0 + s * base));
    }

    #[test]
    fn emd_bounded_by_any_matching((a, b) in pair(1..12)) {
        let (a, b) = (batch(&a), batch(&b));
        let identity: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1])).sum();
        prop_assert!(emd(&a, &b).unwrap() <= identity / a.len() as f64 + 1e-12);
    }

    #[test]
    fn lp_never_exceeds_gp(seed in 0u64..1000, z in points(1..12), lambda in 0.0..50.0f64) {
        let critic = tanh_critic(seed, 6);
        let z = batch(&z);
        let mut tape = Tape::new();
        let bound = critic.bind(&mut tape, true).unwrap();
        let gp = penalty_gp(&bound, &z, lambda, &mut tape).unwrap();
        let lp = penalty_lp(&bound, &z, lambda, &mut tape).unwrap();
        let (gp, lp) = (tape.value(gp).item().unwrap(), tape.value(lp).item().unwrap());
        prop_assert!(lp >= 0.0 && lp <= gp);
    }

    #[test]
    fn linear_critic_gradient_norm_is_weight_norm(w in [coord(), coord()], z in points(1..10)) {
        let z = batch(&z);
        prop_assume!(z.iter().all(|p| (w[0] * p[0] + w[1] * p[1]).abs() > 1e-9));
        let norms = gradient_norm_values(&affine_critic(w, 0.0), &z).unwrap();
        let expected = (w[0] * w[0] + w[1] * w[1] + 1e-12).sqrt();
        prop_assert!(norms.data().iter().all(|&n| (n - expected).abs() < 1e-12));
    }

    #[test]
    fn interpolates_lie_on_segments((a, b) in pair(1..10), seed in any::<u64>()) {
        let (real, fake) = (batch(&a), batch(&b));
        let mut rng = Rng::new(seed);
        let alphas: Vec<f64> = (0..real.len()).map(|_| rng.uniform()).collect();
        let z = interpolate(&real, &fake, &alphas).unwrap();
        for i in 0..z.len() {
            let (r, f, p) = (real.point(i), fake.point(i), z.point(i));
            let seg = (r[0] - f[0]).hypot(r[1] - f[1]);
            let via = (r[0] - p[0]).hypot(r[1] - p[1]) + (p[0] - f[0]).hypot(p[1] - f[1]);
            prop_assert!(via <= seg + 1e-12);
        }
    }

    #[test]
    fn perturbation_stays_in_scaled_box(x in points(2..20), c in 0.01..2.0f64, seed in any::<u64>()) {
        let x = batch(&x);
        let z = sample_local_perturbation(&mut Rng::new(seed), &x, c).unwrap();
        let bound = c * batch_std(&x) + 1e-12;
        for (p, q) in x.iter().zip(z.iter()) {
            for k in 0..2 {
                prop_assert!(q[k] - p[k] >= -1e-12 && q[k] - p[k] <= bound);
            }
        }
    }

    #[test]
    fn tanh_network_input_gradient_matches_fd(seed in 0u64..10_000, x in [coord(), coord()]) {
        let critic = tanh_critic(seed, 5);
        let f = |tape: &mut Tape<f64>, xv| {
            let y = critic.forward(tape, xv)?;
            tape.sum(y)
        };
        let x = Tensor::new(vec![1, 2], x.to_vec()).unwrap();
        prop_assert!(check_gradient(f, &x, 1e-5) < 1e-6);
    }

    #[test]
    fn gradient_is_linear(x in prop::collection::vec(-2.0..2.0f64, 4), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let x = Tensor::new(vec![4], x).unwrap();
        let grad_of = |combo: &dyn Fn(&mut Tape<f64>, lipgan::autodiff::Var) -> lipgan::Result<lipgan::autodiff::Var>| {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone()).unwrap();
            let y = combo(&mut tape, xv).unwrap();
            let g = tape.grad(y, &[xv], false).unwrap()[0];
            tape.value(g).data().to_vec()
        };
        let f = |t: &mut Tape<f64>, v| { let s = t.tanh(v)?; t.sum(s) };
        let g = |t: &mut Tape<f64>, v| { let s = t.square(v)?; t.mean(s) };
        let both = |t: &mut Tape<f64>, v| {
            let fv = f(t, v)?;
            let gv = g(t, v)?;
            let fa = t.scale(fv, a)?;
            let gb = t.scale(gv, b)?;
            t.add(fa, gb)
        };
        let (gf, gg, gboth) = (grad_of(&f), grad_of(&g), grad_of(&both));
        for i in 0..4 {
            prop_assert!((gboth[i] - (a * gf[i] + b * gg[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_form_hessian_is_exact(m in prop::collection::vec(-2.0..2.0f64, 9), x in prop::collection::vec(-2.0..2.0f64, 3)) {
        // f(x) = x^T M x, so grad = (M + M^T) x and each row of the Hessian is M + M^T.
        let mut tape = Tape::new();
        let xv = tape.input(Tensor::new(vec![3, 1], x).unwrap()).unwrap();
        let mv = tape.constant(Tensor::new(vec![3, 3], m.clone()).unwrap()).unwrap();
        let mx = tape.matmul(mv, xv).unwrap();
        let xt = tape.transpose(xv).unwrap();
        let q = tape.matmul(xt, mx).unwrap();
        let f = tape.sum(q).unwrap();
        let g = tape.grad(f, &[xv], true).unwrap()[0];
        for i in 0..3 {
            let gi = tape.slice_rows(g, i, i + 1).unwrap();
            let gi = tape.sum(gi).unwrap();
            let h = tape.grad(gi, &[xv], false).unwrap()[0];
            for j in 0..3 {
                let expected = m[3 * i + j] + m[3 * j + i];
                prop_assert!((tape.value(h).data()[j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rmsprop_moves_against_gradient(g in prop::collection::vec(-5.0..5.0f64, 1..8)) {
        let n = g.len();
        let mut p = Tensor::zeros(&[n]);
        let mut opt = RmsProp::new(RmsPropConfig::default(), &[&[n]]).unwrap();
        opt.step([&mut p], &[Tensor::new(vec![n], g.clone()).unwrap()], |_| "p".into()).unwrap();
        for (pv, gv) in p.data().iter().zip(&g) {
            prop_assert!(pv * gv <= 0.0);
        }
    }

    #[test]
    fn clipping_bounds_every_parameter(seed in any::<u64>(), c in 1e-4..1.0f64) {
        let mut critic = tanh_critic(seed, 7);
        critic.clip_weights(c).unwrap();
        prop_assert!(critic.max_abs() <= c);
    }

    #[test]
    fn checkpoint_roundtrip(seed in any::<u64>(), width in 1usize..9) {
        let net: MlpParams<f64> = init_mlp(&mut Rng::new(seed), Role::Generator, width, Activation::Relu).unwrap();
        let mut bytes = Vec::new();
        net.write_checkpoint(&mut bytes).unwrap();
        let back = MlpParams::<f64>::read_checkpoint(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(back, net);
    }

    #[test]
    fn points_csv_roundtrip(p in points(1..20)) {
        let b = batch(&p);
        let mut out = Vec::new();
        lipgan::data::write_points_csv(&mut out, &b).unwrap();
        let back = lipgan::data::read_points_csv(&String::from_utf8(out).unwrap()).unwrap();
        prop_assert_eq!(back, b);
    }
}

/// Monte Carlo moments of the toy distributions against their closed forms.
#[test]
fn dataset_moments() {
    let n = 200_000;
    for dataset in [Dataset::EightGaussians, Dataset::TwentyFiveGaussians] {
        let b: Batch2D<f64> = dataset.sample(&mut Rng::new(11), n).unwrap();
        let mean = |k: usize| b.iter().map(|p| p[k]).sum::<f64>() / n as f64;
        let (mx, my) = (mean(0), mean(1));
        let second: f64 = b.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / n as f64;
        let expected_second = if dataset == Dataset::EightGaussians {
            // radius 2 / sqrt(2), plus two coordinates of (0.02 / sqrt(2))^2 noise
            2.0 + 2.0 * 0.0002
        } else {
            // grid {-2..2}*2 per axis has E[x^2] = 8, scaled by 1/8; noise 0.05/(2 sqrt 2)
            2.0 * (8.0 / 8.0 + 0.0025 / 8.0)
        };
        assert!(mx.abs() < 0.01 && my.abs() < 0.01, "{dataset}: mean ({mx}, {my})");
        assert!((second - expected_second).abs() < 0.02, "{dataset}: E|x|^2 = {second}");
    }
}

/// Swiss roll radius is proportional to its angle: E|x|^2 = E[t^2 + noise] / 7.5^2.
#[test]
fn swiss_roll_second_moment() {
    let n = 200_000;
    let b: Batch2D<f64> = Dataset::SwissRoll.sample(&mut Rng::new(12), n).unwrap();
    let second: f64 = b.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / n as f64;
    // t = 1.5 pi (1 + 2u): E[t^2] = (1.5 pi)^2 * E[(1 + 2u)^2] = (1.5 pi)^2 * 13/3
    let t2 = (1.5 * std::f64::consts::PI).powi(2) * 13.0 / 3.0;
    let expected = (t2 + 2.0 * 0.25f64.powi(2)) / 7.5f64.powi(2);
    assert!((second - expected).abs() < 0.02 * expected, "{second} vs {expected}");
}

/// Stored grid values equal a fresh one-point forward at the cell coordinate.
#[test]
fn level_set_cells_are_recomputable() {
    use lipgan::viz::{level_set_grid, BBox};
    let critic: MlpParams<f64> = init_mlp(&mut Rng::new(4), Role::Critic, 64, Activation::Relu).unwrap();
    let grid = level_set_grid(&critic, BBox::default(), (128, 96)).unwrap();
    let mut rng = Rng::new(8);
    for _ in 0..100 {
        let (row, col) = (rng.below(96), rng.below(128));
        let p = grid.point(row, col);
        let fresh = critic.evaluate(&Tensor::new(vec![1, 2], p.to_vec()).unwrap()).unwrap();
        assert_eq!(grid.value(row, col), fresh.data()[0], "cell ({row}, {col})");
    }
}
