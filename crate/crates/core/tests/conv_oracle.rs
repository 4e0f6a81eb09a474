//! The convolution kernel against a seven-loop reference with the same
//! accumulation order (input channel, kernel row, kernel column, then bias).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidbuf::tensor::{conv2d, pixel_shuffle, ConvWeights};
use vidbuf::Tensor;

fn naive_conv(x: &Tensor, w: &ConvWeights) -> Tensor {
    let (cin, h, wd) = x.dims();
    let (k, s, p) = (w.kernel_size(), w.stride(), w.padding() as isize);
    let oh = (h + 2 * w.padding() - k) / s + 1;
    let ow = (wd + 2 * w.padding() - k) / s + 1;
    let cout = w.out_channels();
    let mut out = vec![0.0f32; cout * oh * ow];
    for oc in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ic in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as isize - p;
                            let ix = (ox * s + kx) as isize - p;
                            let v = if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                0.0
                            } else {
                                x.get(ic, iy as usize, ix as usize)
                            };
                            acc += w.kernel()[((oc * cin + ic) * k + ky) * k + kx] * v;
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc + w.bias()[oc];
            }
        }
    }
    Tensor::new(cout, oh, ow, out).unwrap()
}

fn random_case(rng: &mut ChaCha8Rng) -> (Tensor, ConvWeights) {
    let cin = rng.gen_range(1..=8);
    let cout = rng.gen_range(1..=8);
    let k = if rng.gen_bool(0.5) { 3 } else { 1 };
    let stride = rng.gen_range(1..=2);
    let pad = if rng.gen_bool(0.8) { k / 2 } else { 0 };
    let h = rng.gen_range(k..=11);
    let w = rng.gen_range(k..=11);
    let x = Tensor::from_fn(cin, h, w, |_, _, _| rng.gen_range(-1.0..1.0)).unwrap();
    let kernel = (0..cout * cin * k * k).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let bias = (0..cout).map(|_| rng.gen_range(-0.2..0.2)).collect();
    let wts = ConvWeights::with_padding(cout, cin, k, stride, pad, kernel, bias).unwrap();
    (x, wts)
}

#[test]
fn conv2d_matches_naive_loops_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut seen = [[false; 2]; 2];
    for case in 0..150 {
        let (x, w) = random_case(&mut rng);
        seen[usize::from(w.kernel_size() == 3)][w.stride() - 1] = true;
        let fast = conv2d(&x, &w).unwrap();
        let slow = naive_conv(&x, &w);
        assert!(fast.bitwise_eq(&slow), "case {case}: {:?} {:?}", x.dims(), w.kernel_dims());
    }
    assert_eq!(seen, [[true; 2]; 2], "every kernel/stride combination exercised");
}

#[test]
fn stride_two_reference_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::from_fn(4, 8, 8, |_, _, _| rng.gen_range(-1.0..1.0)).unwrap();
    let kernel = (0..6 * 4 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bias = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = ConvWeights::new(6, 4, 3, 2, kernel, bias).unwrap();
    let y = conv2d(&x, &w).unwrap();
    assert_eq!(y.dims(), (6, 4, 4));
    assert!(y.bitwise_eq(&naive_conv(&x, &w)));
}

#[test]
fn conv2d_is_deterministic_across_calls_and_threads() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (x, w) = random_case(&mut rng);
    let first = conv2d(&x, &w).unwrap();
    let others: Vec<Tensor> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..4).map(|_| s.spawn(|| conv2d(&x, &w).unwrap())).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(others.iter().all(|o| o.bitwise_eq(&first)));
}

#[test]
fn pixel_shuffle_index_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(8, 2, 2, |_, _, _| rng.gen_range(-1.0..1.0)).unwrap();
    let y = pixel_shuffle(&x, 2).unwrap();
    assert_eq!(y.dims(), (2, 4, 4));
    for c in 0..2 {
        for yy in 0..4 {
            for xx in 0..4 {
                let (dy, dx) = (yy % 2, xx % 2);
                let src = x.get(c * 4 + dy * 2 + dx, yy / 2, xx / 2);
                assert_eq!(y.get(c, yy, xx).to_bits(), src.to_bits());
            }
        }
    }
}
