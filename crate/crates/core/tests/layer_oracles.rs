mod common;

use dla_cascade::autograd::{concat_channels, grad_check, grad_check_params, split_channels};
use dla_cascade::nn::{
    conv2d, gaussian_blurpool, maxpool2d, norm_layer, softmax_channels, spatial_dropout, transpose_conv2d,
    Conv2DParams, GaussianKernel, InstanceNorm,
};
use dla_cascade::{Rng, Tensor};
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};

fn uniform(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(v: Vec<f64>, s: &[usize]) -> Tensor<f64> {
    Tensor::from_vec(v, s).unwrap()
}

#[test]
fn conv_matches_nested_loops_on_random_geometries() {
    let mut rng = Rng::seed_from_u64(42);
    for case in 0..50 {
        let n = rng.random_range(1..=2);
        let c = rng.random_range(1..=3);
        let o = rng.random_range(1..=3);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=k / 2);
        let h = rng.random_range(k..=9);
        let w = rng.random_range(k..=9);
        // small integers make every partial sum exact
        let x: Vec<f64> = (0..n * c * h * w).map(|_| rng.random_range(-4..=4) as f64).collect();
        let wt: Vec<f64> = (0..o * c * k * k).map(|_| rng.random_range(-3..=3) as f64).collect();
        let b: Vec<f64> = (0..o).map(|_| rng.random_range(-2..=2) as f64).collect();
        let p = Conv2DParams::new(tensor(wt.clone(), &[o, c, k, k]), Some(tensor(b.clone(), &[o])), stride, pad)
            .unwrap();
        let got = conv2d(&tensor(x.clone(), &[n, c, h, w]), &p).unwrap();
        let (want, shape) = common::naive_conv2d(&x, [n, c, h, w], &wt, [o, c, k, k], Some(&b), stride, pad);
        assert_eq!(got.shape(), &shape, "case {case}");
        assert_eq!(got.to_vec(), want, "case {case}");

        // real-valued data: only the summation order differs
        let xr = uniform(&mut rng, n * c * h * w);
        let got = conv2d(&tensor(xr.clone(), &[n, c, h, w]), &p).unwrap().to_vec();
        let (want, _) = common::naive_conv2d(&xr, [n, c, h, w], &wt, [o, c, k, k], Some(&b), stride, pad);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn transpose_conv_is_the_adjoint() {
    let mut rng = Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (ci, co, k, s) = (rng.random_range(1..=3), rng.random_range(1..=3), 3, 2);
        let (h, pad, op) = (rng.random_range(2..=6), 1, 1);
        // conv2d maps (ci, 2h) -> (co, h); its adjoint maps (co, h) -> (ci, 2h)
        let w = uniform(&mut rng, co * ci * k * k);
        let fwd = Conv2DParams::new(tensor(w.clone(), &[co, ci, k, k]), None, s, pad).unwrap();
        let mut adj = Conv2DParams::new(tensor(w, &[co, ci, k, k]), None, s, pad).unwrap();
        adj.output_padding = op;
        let x = tensor(uniform(&mut rng, ci * 4 * h * h), &[1, ci, 2 * h, 2 * h]);
        let y = tensor(uniform(&mut rng, co * h * h), &[1, co, h, h]);
        let ax = conv2d(&x, &fwd).unwrap();
        assert_eq!(ax.shape(), y.shape());
        let aty = transpose_conv2d(&y, &adj).unwrap();
        assert_eq!(aty.shape(), x.shape());
        let lhs: f64 = ax.to_vec().iter().zip(y.to_vec()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.to_vec().iter().zip(aty.to_vec()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn every_layer_passes_gradient_check() {
    let mut rng = Rng::seed_from_u64(11);
    let h = 1e-5;
    let x = tensor(uniform(&mut rng, 2 * 3 * 12 * 12), &[2, 3, 12, 12]);
    let conv = Conv2DParams::<f64>::init(3, 4, 3, 1, 1, true, &mut rng).unwrap();
    let strided = Conv2DParams::<f64>::init(3, 2, 3, 2, 1, true, &mut rng).unwrap();
    let up = Conv2DParams::<f64>::init_upsample(3, 2, &mut rng).unwrap();
    let norm = InstanceNorm::<f64>::new(4).unwrap();
    norm.scale.data_mut().copy_from_slice(&[1.3, 0.7, -0.4, 1.0]);
    norm.shift.data_mut().copy_from_slice(&[0.1, -0.2, 0.0, 0.5]);
    let g = GaussianKernel::<f64>::default();
    // weighted sums give every output coordinate a distinct sensitivity
    let probe = |t: &Tensor<f64>| -> dla_cascade::Result<Tensor<f64>> {
        let w: Vec<f64> = (0..t.numel()).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0).collect();
        t.mul(&Tensor::from_vec(w, t.shape())?)?.sum()
    };

    let checks: Vec<(&str, f64)> = vec![
        ("conv2d", grad_check(|x| probe(&conv2d(x, &conv)?), &x, h).unwrap()),
        ("conv2d weights", {
            let p = conv.parameters();
            grad_check_params(|| probe(&conv2d(&x, &conv)?), &p, h, None).unwrap()
        }),
        ("conv2d strided", grad_check(|x| probe(&conv2d(x, &strided)?), &x, h).unwrap()),
        ("transpose_conv2d", grad_check(|x| probe(&transpose_conv2d(x, &up)?), &x, h).unwrap()),
        ("transpose_conv2d weights", {
            let p = up.parameters();
            grad_check_params(|| probe(&transpose_conv2d(&x, &up)?), &p, h, None).unwrap()
        }),
        ("maxpool2d", grad_check(|x| probe(&maxpool2d(x, 2, 2)?), &x, h).unwrap()),
        ("gaussian_blurpool", grad_check(|x| probe(&gaussian_blurpool(x, &g)?), &x, h).unwrap()),
        ("softmax_channels", grad_check(|x| probe(&softmax_channels(x)?), &x, h).unwrap()),
        ("spatial_dropout", grad_check(
            |x| probe(&spatial_dropout(x, 0.5, true, &mut Rng::seed_from_u64(3))?),
            &x,
            h,
        )
        .unwrap()),
        ("conv -> norm -> relu", {
            let mut p = conv.parameters();
            p.extend(norm.parameters());
            let f = || probe(&norm_layer(&conv2d(&x, &conv)?, &norm.scale, &norm.shift, norm.eps)?.relu()?);
            grad_check_params(f, &p, h, None).unwrap().max(
                grad_check(|x| probe(&norm.forward(&conv2d(x, &conv)?)?.relu()?), &x, h).unwrap(),
            )
        }),
        ("concat_channels", grad_check(|x| probe(&concat_channels(&[x.clone(), x.scale(2.0)])?), &x, h).unwrap()),
    ];
    for (name, err) in checks {
        assert!(err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn square_and_relu_gradient_checks() {
    let x = tensor(vec![0.3, -1.2, 2.0, 0.7], &[4]);
    assert!(grad_check(|x| x.mul(x)?.sum(), &x, 1e-5).unwrap() < 1e-8);
    assert!(grad_check(|x| x.relu()?.sum(), &x, 1e-5).unwrap() < 1e-6);
    assert_eq!(grad_check(|_| Ok(Tensor::scalar(3.0)), &x, 1e-5).unwrap(), 0.0);
}

#[test]
fn gaussian_kernel_matches_formula() {
    let profile = common::gaussian_profile(5, 1.25);
    let expected = [0.0924, 0.2414, 0.3324, 0.2414, 0.0924];
    for (p, e) in profile.iter().zip(expected) {
        assert!((p - e).abs() < 1e-4);
    }
    let g = GaussianKernel::<f64>::new(5, 1.25).unwrap();
    let w = g.weights().to_vec();
    for r in 0..5 {
        for c in 0..5 {
            assert!((w[r * 5 + c] - profile[r] * profile[c]).abs() < 1e-9);
            assert_eq!(w[r * 5 + c], w[c * 5 + r]);
            assert_eq!(w[r * 5 + c], w[(4 - r) * 5 + c]);
            assert_eq!(w[r * 5 + c], w[r * 5 + 4 - c]);
        }
    }
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn blurpool_is_steadier_than_strided_max_under_shifts() {
    let g = GaussianKernel::<f64>::default();
    let mut wins = 0;
    for block in 2..=6 {
        let img = common::checkerboard(34, block);
        let base = tensor(common::window(&img, 34, 0, 0, 32), &[1, 1, 32, 32]);
        for (dr, dc) in [(1, 0), (0, 1)] {
            let moved = tensor(common::window(&img, 34, dr, dc, 32), &[1, 1, 32, 32]);
            let delta = |a: &Tensor<f64>, b: &Tensor<f64>| {
                let (a, b) = (a.to_vec(), b.to_vec());
                a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
            };
            let dm = delta(&maxpool2d(&base, 2, 2).unwrap(), &maxpool2d(&moved, 2, 2).unwrap());
            let dg = delta(&gaussian_blurpool(&base, &g).unwrap(), &gaussian_blurpool(&moved, &g).unwrap());
            wins += (dg < dm) as usize;
        }
    }
    assert_eq!(wins, 10);
}

#[test]
fn dropout_matches_its_bernoulli_model() {
    let mut rng = Rng::seed_from_u64(5);
    let x = Tensor::<f64>::ones(&[10_000, 1, 1, 1]).unwrap();
    let y = spatial_dropout(&x, 0.25, true, &mut rng).unwrap().to_vec();
    let dropped = y.iter().filter(|&&v| v == 0.0).count() as f64 / 1e4;
    assert!((0.24..=0.26).contains(&dropped), "{dropped}");
    let mean = y.iter().sum::<f64>() / 1e4;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
    let same = spatial_dropout(&x, 0.9, false, &mut rng).unwrap();
    assert_eq!(same.id(), x.id());
}

#[test]
fn softmax_closed_forms() {
    let p = softmax_channels(&tensor(vec![0.0, 3f64.ln()], &[1, 2, 1, 1])).unwrap().to_vec();
    assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one(logits in proptest::collection::vec(-50.0f64..50.0, 3 * 5), shift in -20.0f64..20.0) {
        let x = tensor(logits.clone(), &[1, 3, 1, 5]);
        let p = softmax_channels(&x).unwrap().to_vec();
        for v in 0..5 {
            let s: f64 = (0..3).map(|k| p[k * 5 + v]).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!((0..3).all(|k| p[k * 5 + v] >= 0.0));
        }
        let shifted = tensor(logits.iter().map(|v| v + shift).collect(), &[1, 3, 1, 5]);
        let q = softmax_channels(&shifted).unwrap().to_vec();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_then_split_is_identity(a in 1usize..4, b in 1usize..4, seed in 0u64..1000) {
        let mut rng = Rng::seed_from_u64(seed);
        let x = tensor(uniform(&mut rng, 2 * a * 9), &[2, a, 3, 3]).to_param();
        let y = tensor(uniform(&mut rng, 2 * b * 9), &[2, b, 3, 3]).to_param();
        let parts = split_channels(&concat_channels(&[x.clone(), y.clone()]).unwrap(), &[a, b]).unwrap();
        prop_assert_eq!(parts[0].to_vec(), x.to_vec());
        prop_assert_eq!(parts[1].to_vec(), y.to_vec());
        parts[0].scale(2.0).sum().unwrap().add(&parts[1].scale(3.0).sum().unwrap()).unwrap().backward().unwrap();
        prop_assert!(x.grad().unwrap().iter().all(|&g| g == 2.0));
        prop_assert!(y.grad().unwrap().iter().all(|&g| g == 3.0));
    }

    #[test]
    fn blurpool_keeps_constants(c in -5.0f64..5.0, side in 6usize..14) {
        let x = Tensor::<f64>::full(&[1, 2, side, side], c).unwrap();
        let y = gaussian_blurpool(&x, &GaussianKernel::default()).unwrap();
        prop_assert!(y.to_vec().iter().all(|v| (v - c).abs() < 1e-12));
    }
}
