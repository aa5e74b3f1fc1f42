//! Differentiable operations recorded on a [`Tape`](super::Tape).
//!
//! Shape mismatches are configuration errors and panic with the offending
//! shapes in the message.

mod basic;
mod conv;
pub use conv::conv_out_size;
mod sample;

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

macro_rules! config_error {
    ($($arg:tt)*) => {
        panic!("configuration error: {}", format!($($arg)*))
    };
}
pub(crate) use config_error;

#[cfg(test)]
mod tests {
    use crate::autodiff::{Tape, Tensor};

    #[test]
    fn pointwise_scaling_conv() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::full([1, 1, 3, 3], 1.0));
        let w = t.constant(Tensor::new([1, 1, 1, 1], vec![2.0]));
        let y = t.conv2d(x, w, 1, 1, 0);
        assert_eq!(t.value(y).data(), &[2.0; 9]);
    }

    #[test]
    fn full_window_center_sum() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::from_fn([1, 1, 3, 3], |i| (i + 1) as f32));
        let w = t.constant(Tensor::full([1, 1, 3, 3], 1.0));
        let y = t.conv2d(x, w, 1, 1, 1);
        assert_eq!(t.shape(y), &[1, 1, 3, 3]);
        assert_eq!(t.value(y).data()[4], 45.0);
        // corner sees 1+2+4+5
        assert_eq!(t.value(y).data()[0], 12.0);
    }

    #[test]
    fn strided_output_size() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros([1, 3, 64, 64]));
        let w = t.constant(Tensor::zeros([8, 3, 7, 7]));
        let y = t.conv2d(x, w, 1, 2, 3);
        assert_eq!(t.shape(y), &[1, 8, 32, 32]);
        assert_eq!(t.macs(), 8 * 3 * 49 * 32 * 32);
    }

    #[test]
    fn depthwise_unit_kernel_is_identity() {
        let mut t = Tape::<f32>::new();
        let data = Tensor::from_fn([2, 4, 5, 5], |i| (i as f32 * 0.37).sin());
        let x = t.constant(data.clone());
        let w = t.constant(Tensor::full([4, 1, 1, 1], 1.0));
        let y = t.conv2d(x, w, 4, 1, 0);
        assert_eq!(t.value(y), &data);
    }

    #[test]
    #[should_panic(expected = "conv2d: input [1, 3, 4, 4], weight [2, 2, 3, 3]")]
    fn conv_channel_mismatch_names_shapes() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros([1, 3, 4, 4]));
        let w = t.constant(Tensor::zeros([2, 2, 3, 3]));
        t.conv2d(x, w, 1, 1, 1);
    }

    #[test]
    fn instance_norm_constant_plane_collapses_to_beta() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::full([1, 2, 3, 3], 4.2));
        let g = t.constant(Tensor::full([2], 1.0));
        let b = t.constant(Tensor::zeros([2]));
        let y = t.instance_norm(x, g, b, 1e-5);
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn instance_norm_two_element_plane() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new([1, 1, 1, 2], vec![1.0, 3.0]));
        let g = t.constant(Tensor::full([1], 1.0));
        let b = t.constant(Tensor::zeros([1]));
        let y = t.instance_norm(x, g, b, 1e-5);
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        let d = t.value(y).data();
        assert!((d[0] + expect).abs() < 1e-12 && (d[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn l2_of_identical_inputs_is_zero() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::from_fn([3, 5], |i| i as f32 - 7.0));
        let l = t.l2_loss(x, x);
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros([1, 2]));
        let y = t.softmax_lastdim(x);
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn bilinear_sample_at_knots_is_exact() {
        let mut t = Tape::<f32>::new();
        let img = Tensor::from_fn([1, 2, 4, 5], |i| (i as f32 * 1.7).cos());
        let x = t.constant(img.clone());
        // identity grid
        let grid = Tensor::from_fn([1, 4, 5, 2], |i| {
            let p = i / 2;
            if i % 2 == 0 {
                (p % 5) as f32
            } else {
                (p / 5) as f32
            }
        });
        let g = t.constant(grid);
        let y = t.bilinear_sample(x, g);
        assert_eq!(t.value(y), &img);
    }

    #[test]
    fn backward_of_linear_form_returns_coefficients() {
        let mut t = Tape::<f64>::new();
        let coeffs = Tensor::new([4], vec![1.5, -2.0, 0.25, 3.0]);
        let w = t.variable(Tensor::new([4], vec![0.3, 0.1, -0.7, 2.0]));
        let x = t.constant(coeffs.clone());
        let p = t.mul(w, x);
        let loss = t.sum(p);
        let g = t.backward(loss);
        assert_eq!(g.wrt(w).unwrap(), coeffs.data());
        assert!(g.wrt(x).is_none());
    }

    #[test]
    fn reused_value_accumulates_both_paths() {
        let mut t = Tape::<f64>::new();
        let w = t.variable(Tensor::new([2], vec![3.0, -1.0]));
        let a = t.scale(w, 2.0);
        let b = t.scale(w, 5.0);
        let s = t.add(a, b);
        let loss = t.sum(s);
        let g = t.backward(loss);
        assert_eq!(g.wrt(w).unwrap(), &[7.0, 7.0]);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::<f64>::new();
        let w = t.variable(Tensor::zeros([2]));
        t.backward(w);
    }

    #[test]
    fn forward_replay_is_bitwise_identical() {
        let run = || {
            let mut t = Tape::<f32>::new();
            let x = t.constant(Tensor::from_fn([2, 3, 6, 6], |i| (i as f32 * 0.13).sin()));
            let w = t.constant(Tensor::from_fn([4, 3, 3, 3], |i| (i as f32 * 0.29).cos()));
            let y = t.conv2d(x, w, 1, 2, 1);
            let g = t.constant(Tensor::full([4], 1.0));
            let b = t.constant(Tensor::zeros([4]));
            let y = t.instance_norm(y, g, b, 1e-5);
            t.value(y).clone()
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn every_op_matches_finite_differences() {
        for outcome in crate::selftest::op_gradient_suite() {
            assert!(outcome.passed, "{outcome}");
        }
    }

    #[test]
    fn toy_model_matches_finite_differences() {
        let outcome = crate::selftest::end_to_end_gradient_check();
        assert!(outcome.passed, "{outcome}");
    }
}
