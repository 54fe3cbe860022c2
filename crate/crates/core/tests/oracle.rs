//! conv2d and maxpool2d against direct nested-loop definitions.

use proptest::prelude::*;
use pvcnn_core::kernels::{conv2d, maxpool2d};
use pvcnn_core::rng::SplitMix64;
use pvcnn_core::{ConvGeometry, Tensor};

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, g: &ConvGeometry) -> Tensor<f64> {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [f, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let (oh, ow) = g.output_extent(h, wd).unwrap();
    let mut out = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b.data()[fi];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * g.stride.0 + i) as isize - g.padding.0 as isize;
                                let ix = (xo * g.stride.1 + j) as isize - g.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((fi * c + ci) * kh + i) * kw + j];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, f, oh, ow], out).unwrap()
}

fn naive_pool(x: &Tensor<f64>, win: (usize, usize), stride: (usize, usize)) -> Tensor<f64> {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let oh = (h - win.0) / stride.0 + 1;
    let ow = (w - win.1) / stride.1 + 1;
    let mut out = Vec::new();
    for plane in 0..n * c {
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for i in 0..win.0 {
                    for j in 0..win.1 {
                        best = best.max(x.data()[(plane * h + y * stride.0 + i) * w + xo * stride.1 + j]);
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out).unwrap()
}

fn random(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
struct Case {
    n: usize,
    c: usize,
    f: usize,
    h: usize,
    w: usize,
    geom: ConvGeometry,
    seed: u64,
}

fn conv_case() -> impl Strategy<Value = Case> {
    (1..3usize, 1..4usize, 1..4usize, 1..5usize, 1..5usize, 1..3usize, 1..3usize, 0..3usize, 0..3usize)
        .prop_flat_map(|(n, c, f, kh, kw, sh, sw, ph, pw)| {
            let min_h = kh.saturating_sub(2 * ph).max(1);
            let min_w = kw.saturating_sub(2 * pw).max(1);
            (min_h..min_h + 8, min_w..min_w + 8, any::<u64>()).prop_map(move |(h, w, seed)| Case {
                n,
                c,
                f,
                h,
                w,
                geom: ConvGeometry::new((kh, kw), (sh, sw), (ph, pw)).unwrap(),
                seed,
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn conv_matches_nested_loops(case in conv_case()) {
        let mut rng = SplitMix64::new(case.seed);
        let (kh, kw) = case.geom.kernel;
        let x = random(&[case.n, case.c, case.h, case.w], &mut rng);
        let w = random(&[case.f, case.c, kh, kw], &mut rng);
        let b = random(&[case.f], &mut rng);
        let fast = conv2d(&x, &w, &b, &case.geom).unwrap();
        let (oh, ow) = case.geom.output_extent(case.h, case.w).unwrap();
        prop_assert_eq!(fast.shape(), &[case.n, case.f, oh, ow][..]);
        prop_assert!(max_abs_diff(&fast, &naive_conv(&x, &w, &b, &case.geom)) <= 1e-12);
    }

    #[test]
    fn conv_is_linear_in_input(case in conv_case(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = SplitMix64::new(case.seed);
        let (kh, kw) = case.geom.kernel;
        let shape = [case.n, case.c, case.h, case.w];
        let x = random(&shape, &mut rng);
        let y = random(&shape, &mut rng);
        let w = random(&[case.f, case.c, kh, kw], &mut rng);
        let zero = Tensor::zeros(&[case.f]);
        let mix = Tensor::from_fn(&shape, |i| alpha * x.data()[i] + beta * y.data()[i]);
        let lhs = conv2d(&mix, &w, &zero, &case.geom).unwrap();
        let cx = conv2d(&x, &w, &zero, &case.geom).unwrap();
        let cy = conv2d(&y, &w, &zero, &case.geom).unwrap();
        let rhs = Tensor::from_fn(lhs.shape(), |i| alpha * cx.data()[i] + beta * cy.data()[i]);
        prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-10);
    }

    #[test]
    fn pool_matches_nested_loops(
        n in 1..3usize, c in 1..4usize,
        wh in 1..4usize, ww in 1..4usize, sh in 1..4usize, sw in 1..4usize,
        eh in 0..8usize, ew in 0..8usize, seed in any::<u64>(),
    ) {
        let mut rng = SplitMix64::new(seed);
        let x = random(&[n, c, wh + eh, ww + ew], &mut rng);
        let (fast, _) = maxpool2d(&x, (wh, ww), (sh, sw)).unwrap();
        prop_assert!(max_abs_diff(&fast, &naive_pool(&x, (wh, ww), (sh, sw))) <= 1e-12);
    }

    #[test]
    fn pool_output_is_elementwise_upper_bound_of_nothing_larger(
        h in 2..10usize, w in 2..10usize, seed in any::<u64>(),
    ) {
        let mut rng = SplitMix64::new(seed);
        let x = random(&[1, 1, h, w], &mut rng);
        let (y, _) = maxpool2d(&x, (2, 2), (2, 2)).unwrap();
        let max_in = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(y.data().iter().all(|&v| v <= max_in));
    }
}

#[test]
fn pool_ties_pick_first_occurrence() {
    let x = Tensor::<f64>::full(&[1, 1, 2, 2], 1.0);
    let (_, idx) = maxpool2d(&x, (2, 2), (2, 2)).unwrap();
    assert_eq!(idx.argmax(), &[0]);
}
