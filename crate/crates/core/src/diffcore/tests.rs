use super::*;
use proptest::prelude::*;

fn t(data: &[f64], shape: &[usize]) -> Tensor {
    Tensor::new(data.to_vec(), shape)
}

#[test]
fn add_elementwise() {
    let y = t(&[1.0, 2.0], &[2]).add(&t(&[3.0, 4.0], &[2])).unwrap();
    assert_eq!(y.data(), &[4.0, 6.0]);
}

#[test]
fn matmul_identity() {
    let eye = t(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
    let x = t(&[0.3, -1.7, 2.5], &[3, 1]);
    assert_eq!(eye.matmul(&x).unwrap().data(), x.data());
}

#[test]
fn tanh_at_origin() {
    let x = Tensor::param(vec![0.0], &[1]);
    let y = x.tanh();
    assert_eq!(y.item(), 0.0);
    y.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0]);
}

#[test]
fn shape_mismatch_names_shapes() {
    let err = t(&[1.0, 2.0], &[2]).add(&t(&[1.0, 2.0, 3.0], &[3])).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    assert!(t(&[1.0; 6], &[2, 3]).matmul(&t(&[1.0; 6], &[2, 3])).is_err());
}

#[test]
fn power_rule() {
    let x = Tensor::param(vec![3.0], &[]);
    x.square().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![6.0]);
}

#[test]
fn linear_map_adjoint_is_column_sums() {
    let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
    let x = Tensor::param(vec![0.5, -1.0, 2.0], &[3, 1]);
    a.matmul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![5.0, 7.0, 9.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let x = Tensor::param(vec![1.0, 2.0], &[2]);
    assert!(matches!(x.square().backward(), Err(DiffError::NonScalarLoss(_))));
}

#[test]
fn accumulation_is_additive() {
    let x = Tensor::param(vec![1.5, -2.0], &[2]);
    let loss = x.square().sum();
    loss.backward().unwrap();
    let once = x.grad().unwrap();
    loss.backward().unwrap();
    let twice = x.grad().unwrap();
    assert_eq!(twice, once.iter().map(|g| 2.0 * g).collect::<Vec<_>>());
}

#[test]
fn shared_subexpression_visited_once() {
    // y = u * u with u = 2x: dy/dx = 8x
    let x = Tensor::param(vec![1.25], &[1]);
    let u = x.scale(2.0);
    u.mul(&u).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![10.0]);
}

#[test]
fn no_grad_records_nothing() {
    let x = Tensor::param(vec![1.0], &[1]);
    let y = no_grad(|| x.exp());
    assert!(!y.requires_grad());
    assert!(grad_enabled());
}

#[test]
fn sqrt_at_zero_has_zero_gradient() {
    let x = Tensor::param(vec![0.0, 0.0], &[2]);
    x.square().sum().sqrt().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
}

#[test]
fn check_gradient_sum_of_squares() {
    let x = t(&[1.0, 2.0, 3.0], &[3]);
    let err = check_gradient(|x| Ok(x.square().sum()), &x, 1e-5).unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn check_gradient_constant_function() {
    let x = t(&[0.4, -0.2], &[2]);
    let (analytic, _) = gradients(&|_x: &Tensor| Ok(Tensor::scalar(3.0)), &x, 1e-6).unwrap();
    assert_eq!(analytic, vec![0.0, 0.0]);
}

#[test]
fn quaternion_normalize_gradient() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q: Vec<f64> = q.iter().map(|v| v / n).collect();
        let f = |x: &Tensor| {
            let norm = x.square().sum_axis(1, true)?.sqrt();
            let w = t(&[0.3, -1.1, 0.7, 2.0], &[1, 4]);
            Ok(x.div(&norm)?.mul(&w)?.sum())
        };
        let err = check_gradient(f, &t(&q, &[1, 4]), 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }
}

#[test]
fn two_layer_tanh_network_gradient() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut rand_t = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape)
    };
    let x = rand_t(&[4, 3]);
    let w1 = rand_t(&[3, 5]);
    let b1 = rand_t(&[5]);
    let w2 = rand_t(&[5, 2]);
    let net = |w1: &Tensor| {
        let h = x.matmul(w1)?.add(&b1)?.tanh();
        Ok(h.matmul(&w2)?.tanh().sum())
    };
    let err = check_gradient(net, &w1, 1e-6).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn chain_rule_matches_manual_two_step_product() {
    // s1 = F(s0, a0), s2 = F(s1, a1) with F(s, a) = tanh(A s + a); L = sum(s2²)
    let a_mat = t(&[0.5, -0.3, 0.2, 0.8], &[2, 2]);
    let f = |s: &Tensor, a: &Tensor| Ok::<_, DiffError>(a_mat.matmul(s)?.add(a)?.tanh());
    let s0 = Tensor::param(vec![0.3, -0.6], &[2, 1]);
    let a0 = t(&[0.1, 0.2], &[2, 1]);
    let a1 = t(&[-0.4, 0.05], &[2, 1]);
    let s1 = f(&s0, &a0).unwrap();
    s1.retain_grad();
    let s2 = f(&s1, &a1).unwrap();
    s2.square().sum().backward().unwrap();

    // manual: dL/ds1 = (dL/ds2)(dF/ds1), dL/ds0 = (dL/ds1)(dF/ds0)
    let jac = |s_next: &[f64]| {
        let m = a_mat.data();
        [
            [(1.0 - s_next[0] * s_next[0]) * m[0], (1.0 - s_next[0] * s_next[0]) * m[1]],
            [(1.0 - s_next[1] * s_next[1]) * m[2], (1.0 - s_next[1] * s_next[1]) * m[3]],
        ]
    };
    let l_s2 = [2.0 * s2.data()[0], 2.0 * s2.data()[1]];
    let j2 = jac(s2.data());
    let l_s1 = [l_s2[0] * j2[0][0] + l_s2[1] * j2[1][0], l_s2[0] * j2[0][1] + l_s2[1] * j2[1][1]];
    let j1 = jac(s1.data());
    let l_s0 = [l_s1[0] * j1[0][0] + l_s1[1] * j1[1][0], l_s1[0] * j1[0][1] + l_s1[1] * j1[1][1]];
    let got1 = s1.grad().unwrap();
    let got0 = s0.grad().unwrap();
    for i in 0..2 {
        assert!((got1[i] - l_s1[i]).abs() < 1e-14);
        assert!((got0[i] - l_s0[i]).abs() < 1e-14);
    }
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let x = Tensor::param(vec![0.2, -0.7, 1.3, 0.05], &[2, 2]);
        let y = x.matmul(&x).unwrap().tanh().exp().sum();
        y.backward().unwrap();
        (y.item().to_bits(), x.grad().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn clip_grad_norm_scales_to_max() {
    let a = Tensor::param(vec![3.0], &[1]);
    let b = Tensor::param(vec![4.0], &[1]);
    a.sum().scale(3.0).add(&b.sum().scale(4.0)).unwrap().backward().unwrap();
    let norm = clip_grad_norm(&[&a, &b], 1.0);
    assert!((norm - 5.0).abs() < 1e-12);
    let ga = a.grad().unwrap()[0];
    let gb = b.grad().unwrap()[0];
    assert!(((ga * ga + gb * gb).sqrt() - 1.0).abs() < 1e-9);
}

#[test]
fn conv2d_matches_direct_loop() {
    // 1 image, 2 channels 5x5, 3 filters 3x3, stride 2, pad 1
    let input: Vec<f64> = (0..50).map(|i| ((i * 7) % 11) as f64 * 0.1 - 0.5).collect();
    let weight: Vec<f64> = (0..54).map(|i| ((i * 5) % 13) as f64 * 0.05 - 0.3).collect();
    let bias = vec![0.1, -0.2, 0.3];
    let x = t(&input, &[1, 2, 5, 5]);
    let y = x.conv2d(&t(&weight, &[3, 2, 3, 3]), &t(&bias, &[3]), 2, 1).unwrap();
    assert_eq!(y.shape(), &[1, 3, 3, 3]);
    for o in 0..3 {
        for oy in 0..3 {
            for ox in 0..3 {
                let mut acc = bias[o];
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                acc += input[(c * 5 + iy as usize) * 5 + ix as usize]
                                    * weight[((o * 2 + c) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                }
                let got = y.data()[(o * 3 + oy) * 3 + ox];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, n)
}

fn weights(n: usize) -> Tensor {
    Tensor::new((0..n).map(|i| 0.37 * (i as f64 + 1.0).sin() + 0.5).collect(), &[n])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unary_adjoints_match_finite_differences(x in vec_strategy(6)) {
        let shifted: Vec<f64> = x.iter().map(|v| v.abs() + 0.3).collect();
        let xt = Tensor::new(shifted, &[2, 3]);
        let w = weights(6).reshape(&[2, 3]).unwrap();
        let fs: Vec<Box<dyn Fn(&Tensor) -> Result<Tensor, DiffError>>> = vec![
            Box::new(|x: &Tensor| Ok(x.tanh().mul(&w)?.sum())),
            Box::new(|x: &Tensor| Ok(x.exp().mul(&w)?.sum())),
            Box::new(|x: &Tensor| Ok(x.log().mul(&w)?.sum())),
            Box::new(|x: &Tensor| Ok(x.square().mul(&w)?.sum())),
            Box::new(|x: &Tensor| Ok(x.sqrt().mul(&w)?.sum())),
            Box::new(|x: &Tensor| Ok(x.neg().scale(1.7).add_scalar(0.2).mul(&w)?.sum())),
            Box::new(|x: &Tensor| Ok(x.relu().mul(&w)?.mean())),
            Box::new(|x: &Tensor| Ok(x.sum_axis(0, false)?.square().sum())),
            Box::new(|x: &Tensor| Ok(x.mean_axis(1, true)?.exp().sum())),
            Box::new(|x: &Tensor| Ok(x.narrow(1, 1, 2)?.square().sum())),
            Box::new(|x: &Tensor| Ok(x.reshape(&[3, 2])?.matmul(x)?.tanh().sum())),
            Box::new(|x: &Tensor| Ok(Tensor::concat(&[x, &x.square()], 1)?.mul(&Tensor::new((0..12).map(|i| i as f64 * 0.1).collect(), &[2, 6]))?.sum())),
        ];
        for f in &fs {
            let err = gradient_error(f, &xt, 1e-6).unwrap();
            prop_assert!(err < 1e-5, "relative error {}", err);
        }
    }

    #[test]
    fn binary_broadcast_adjoints_match(x in vec_strategy(6), y in vec_strategy(3)) {
        let xt = Tensor::new(x, &[2, 3]);
        let ypos: Vec<f64> = y.iter().map(|v| v.abs() + 0.5).collect();
        let yt = Tensor::new(ypos, &[3]);
        let w = weights(6).reshape(&[2, 3]).unwrap();
        for kind in 0..4 {
            let f_x = |x: &Tensor| {
                let z = match kind { 0 => x.add(&yt)?, 1 => x.sub(&yt)?, 2 => x.mul(&yt)?, _ => x.div(&yt)? };
                Ok(z.mul(&w)?.sum())
            };
            prop_assert!(gradient_error(f_x, &xt, 1e-6).unwrap() < 1e-5);
            let f_y = |y: &Tensor| {
                let z = match kind { 0 => xt.add(y)?, 1 => xt.sub(y)?, 2 => xt.mul(y)?, _ => xt.div(y)? };
                Ok(z.mul(&w)?.sum())
            };
            prop_assert!(gradient_error(f_y, &yt, 1e-6).unwrap() < 1e-5);
        }
    }

    #[test]
    fn clamp_and_maximum_adjoints_match(x in vec_strategy(6)) {
        // keep away from the kinks
        let x: Vec<f64> = x.iter().map(|v| if v.abs() < 0.05 { v + 0.2 } else { *v }).collect();
        let xt = Tensor::new(x.clone(), &[6]);
        let other = Tensor::new(x.iter().map(|v| if *v > 0.0 { v - 0.3 } else { v + 0.3 }).collect(), &[6]);
        let w = weights(6);
        prop_assert!(gradient_error(|x| Ok(x.clamp(-0.9, 0.9).mul(&w)?.sum()), &xt, 1e-7).unwrap() < 1e-5);
        prop_assert!(gradient_error(|x| Ok(x.maximum(&other)?.mul(&w)?.sum()), &xt, 1e-7).unwrap() < 1e-5);
    }

    #[test]
    fn quat_mul_adjoint_matches(a in vec_strategy(8), b in vec_strategy(8)) {
        let at = Tensor::new(a, &[2, 4]);
        let bt = Tensor::new(b, &[2, 4]);
        let w = weights(8).reshape(&[2, 4]).unwrap();
        prop_assert!(gradient_error(|a| Ok(a.quat_mul(&bt)?.mul(&w)?.sum()), &at, 1e-6).unwrap() < 1e-5);
        prop_assert!(gradient_error(|b| Ok(at.quat_mul(b)?.mul(&w)?.sum()), &bt, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn conv2d_adjoint_matches(x in vec_strategy(2 * 2 * 4 * 4), wv in vec_strategy(3 * 2 * 9)) {
        let xt = Tensor::new(x, &[2, 2, 4, 4]);
        let wt = Tensor::new(wv, &[3, 2, 3, 3]);
        let b = Tensor::new(vec![0.1, -0.1, 0.2], &[3]);
        let f_x = |x: &Tensor| Ok(x.conv2d(&wt, &b, 2, 1)?.tanh().sum());
        prop_assert!(gradient_error(f_x, &xt, 1e-6).unwrap() < 1e-5);
        let f_w = |w: &Tensor| Ok(xt.conv2d(w, &b, 2, 1)?.tanh().sum());
        prop_assert!(gradient_error(f_w, &wt, 1e-6).unwrap() < 1e-5);
        let f_b = |b: &Tensor| Ok(xt.conv2d(&wt, b, 2, 1)?.tanh().sum());
        prop_assert!(gradient_error(f_b, &b, 1e-6).unwrap() < 1e-5);
    }
}
