use std::rc::Rc;

use pocketdiff_tensor::{finite_difference_check, finite_difference_check_many, Tape, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(5, 7)) {
        let mut tape = Tape::new();
        let v = tape.leaf(x.scale_for_test(20.0));
        let s = tape.softmax(v).unwrap();
        for row in tape.value(s).iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn every_primitive_matches_central_differences(
        a in matrix(4, 3),
        b in matrix(3, 2),
        bias in matrix(1, 2),
    ) {
        let index: Rc<[usize]> = vec![0, 3, 3, 1, 2].into();
        let target: Rc<[usize]> = vec![1, 0, 1, 2, 2].into();
        let err = finite_difference_check_many(
            |t, v| {
                let (a, b, bias) = (v[0], v[1], v[2]);
                let ab = t.matmul(a, b)?;
                let ab = t.add_row(ab, bias)?;
                let s = t.silu(ab)?;
                let small = t.scale(s, 0.3)?;
                let e = t.exp(small)?;
                let sm = t.softmax(e)?;
                let lg = t.log(sm)?;
                let g = t.gather_rows(lg, index.clone())?;
                let sc = t.scatter_add_rows(g, target.clone(), 3)?;
                let rs = t.row_sum(sc)?;
                let sq = t.mul(rs, rs)?;
                let one = t.add_scalar(sq, 1.0)?;
                let r = t.recip(one)?;
                let root = t.sqrt(one)?;
                let cat = t.concat(&[r, root], 1)?;
                let sl = t.slice(cat, 0, 1, 3)?;
                let col = t.slice(cat, 1, 0, 1)?;
                let scaled = t.mul_col(cat, col)?;
                let diff = t.sub(scaled, cat)?;
                let n1 = t.squared_norm(diff)?;
                let n2 = t.mean(sl)?;
                let n3 = t.sum(ab)?;
                let n3 = t.scale(n3, 0.1)?;
                let l = t.add(n1, n2)?;
                t.add(l, n3)
            },
            &[a, b, bias],
            1e-5,
        )
        .unwrap();
        prop_assert!(err <= 1e-6, "max relative error {}", err);
    }

    #[test]
    fn forward_and_backward_are_deterministic(a in matrix(6, 4), b in matrix(4, 5)) {
        let run = || {
            let mut tape = Tape::new();
            let va = tape.leaf(a.clone());
            let vb = tape.leaf(b.clone());
            let c = tape.matmul(va, vb).unwrap();
            let s = tape.silu(c).unwrap();
            let l = tape.squared_norm(s).unwrap();
            let g = tape.backward(l).unwrap();
            (tape.value(l).clone(), g.wrt(va), g.wrt(vb))
        };
        let first = run();
        let second = run();
        prop_assert_eq!(first, second);
    }
}

#[test]
fn relu_gradient_away_from_the_kink() {
    let x = Tensor::vector(vec![-1.5, 0.4, 2.0, -0.2]);
    let err = finite_difference_check(
        |t, v| {
            let r = t.relu(v)?;
            let s = t.squared_norm(r)?;
            t.mean(s)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-8, "{err}");
}

trait ScaleForTest {
    fn scale_for_test(&self, s: f64) -> Tensor;
}

impl ScaleForTest for Tensor {
    fn scale_for_test(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }
}
