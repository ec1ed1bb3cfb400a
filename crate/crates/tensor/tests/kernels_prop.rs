use cuboidcast_tensor::ops::{patch_merge_index, patch_unmerge_index};
use cuboidcast_tensor::{attention, conv2d_3x3, gather, AttentionMask, Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                c[i * n + j] += a.at(&[i, l]) * b.at(&[l, j]);
            }
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_matches_triple_loop(
        (a, b) in (1usize..7, 1usize..7, 1usize..7)
            .prop_flat_map(|(m, k, n)| (tensor(vec![m, k]), tensor(vec![k, n])))
    ) {
        let tape = Tape::new();
        let c = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap().value();
        for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn single_precision_matmul_close_to_double(
        (a, b) in (1usize..7, 1usize..7, 1usize..7)
            .prop_flat_map(|(m, k, n)| (tensor(vec![m, k]), tensor(vec![k, n])))
    ) {
        let tape = Tape::<f32>::new();
        let c = tape.constant(a.cast()).matmul(tape.constant(b.cast())).unwrap().value();
        for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((*x as f64 - y).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_slices_are_positive_and_normalized(
        (x, axis) in prop::collection::vec(1usize..6, 1..5)
            .prop_flat_map(|s| { let r = s.len(); (tensor(s), 0..r) })
    ) {
        let tape = Tape::new();
        let y = tape.constant(x.clone()).softmax(axis).unwrap().value();
        prop_assert!(y.data().iter().all(|&v| v > 0.0));
        let s = x.shape();
        let inner: usize = s[axis + 1..].iter().product();
        let outer: usize = s[..axis].iter().product();
        for o in 0..outer {
            for i in 0..inner {
                let total: f64 = (0..s[axis]).map(|j| y.data()[(o * s[axis] + j) * inner + i]).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn conv_matches_nine_tap_loop(
        (x, w) in (1usize..3, 1usize..6, 1usize..6, 1usize..4, 1usize..4)
            .prop_flat_map(|(n, h, wd, ci, co)| (tensor(vec![n, h, wd, ci]), tensor(vec![3, 3, ci, co])))
    ) {
        let tape = Tape::new();
        let y = conv2d_3x3(tape.constant(x.clone()), tape.constant(w.clone()), None).unwrap().value();
        let s = x.shape();
        let co = w.shape()[3];
        for b in 0..s[0] { for r in 0..s[1] { for c in 0..s[2] { for o in 0..co {
            let mut acc = 0.0;
            for dy in 0..3 { for dx in 0..3 {
                let (rr, cc) = (r as isize + dy - 1, c as isize + dx - 1);
                if rr < 0 || cc < 0 || rr >= s[1] as isize || cc >= s[2] as isize { continue; }
                for i in 0..s[3] {
                    acc += x.at(&[b, rr as usize, cc as usize, i]) * w.at(&[dy as usize, dx as usize, i, o]);
                }
            }}
            prop_assert!((y.at(&[b, r, c, o]) - acc).abs() < 1e-10);
        }}}}
    }

    #[test]
    fn patch_merge_round_trip_is_bitwise(
        (x, f) in (1usize..3, 1usize..4, 1usize..4, 1usize..4, 1usize..3)
            .prop_flat_map(|(n, hh, ww, c, f)| (tensor(vec![n, hh * f, ww * f, c]), Just(f)))
    ) {
        let s = x.shape().to_vec();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let tape = Tape::new();
        let v = tape.constant(x.clone());
        let m = gather(&[v], patch_merge_index(n, h, w, f).into(), &[n, h / f, w / f, f * f * c]).unwrap();
        let rows = m.reshape([n * h * w, c]).unwrap();
        let u = gather(&[rows], patch_unmerge_index(n, h / f, w / f, f).into(), &[n, h, w, c]).unwrap();
        let uv = u.value();
        prop_assert_eq!(uv.data(), x.data());
    }

    #[test]
    fn attention_rows_are_convex_combinations(
        (q, k) in (1usize..4, 1usize..6).prop_flat_map(|(nq, nk)| (tensor(vec![1, nq, 4]), tensor(vec![1, nk, 4])))
    ) {
        // With every value row equal, the output equals that row.
        let tape = Tape::new();
        let nk = k.shape()[1];
        let v = Tensor::from_fn([1, nk, 4], |i| (i % 4) as f64);
        let y = attention(tape.constant(q), tape.constant(k), tape.constant(v), 2, AttentionMask::default())
            .unwrap().value();
        for (i, val) in y.data().iter().enumerate() {
            prop_assert!((val - (i % 4) as f64).abs() < 1e-10);
        }
    }
}
